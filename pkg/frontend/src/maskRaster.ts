/**
 * Pure mask rasterization: round-brush strokes over a pixel grid.
 *
 * A stroke is a polyline with a radius; a pixel belongs to the mask when its
 * center lies within the radius of any segment (single points are discs).
 * The exported bitmap uses the server convention: 1 = defective pixel,
 * encoded as 255 in the grayscale PNG upload.
 */

export interface Point {
  x: number;
  y: number;
}

export interface Stroke {
  points: Point[];
  radius: number;
}

export function distToSegmentSq(px: number, py: number, a: Point, b: Point): number {
  const dx = b.x - a.x;
  const dy = b.y - a.y;
  const norm2 = dx * dx + dy * dy;
  let t = 0;
  if (norm2 > 0) {
    t = ((px - a.x) * dx + (py - a.y) * dy) / norm2;
    t = Math.max(0, Math.min(1, t));
  }
  const cx = a.x + t * dx;
  const cy = a.y + t * dy;
  return (px - cx) * (px - cx) + (py - cy) * (py - cy);
}

/** Rasterize strokes to a width*height bitmap of 0/1 bytes. */
export function rasterizeStrokes(strokes: Stroke[], width: number, height: number): Uint8Array {
  const mask = new Uint8Array(width * height);
  for (const stroke of strokes) {
    const r = stroke.radius;
    const r2 = r * r;
    const pts = stroke.points.length === 1 ? [stroke.points[0], stroke.points[0]] : stroke.points;
    for (let i = 0; i + 1 < pts.length; i++) {
      const a = pts[i];
      const b = pts[i + 1];
      const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - r));
      const x1 = Math.min(width - 1, Math.ceil(Math.max(a.x, b.x) + r));
      const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - r));
      const y1 = Math.min(height - 1, Math.ceil(Math.max(a.y, b.y) + r));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          if (distToSegmentSq(x, y, a, b) <= r2) {
            mask[y * width + x] = 1;
          }
        }
      }
    }
  }
  return mask;
}

export function maskCoverage(mask: Uint8Array): number {
  let n = 0;
  for (const v of mask) n += v;
  return n / mask.length;
}

/** Bitmap -> grayscale image bytes (255 = defect) for canvas/PNG export. */
export function maskToGray(mask: Uint8Array): Uint8ClampedArray {
  const out = new Uint8ClampedArray(mask.length);
  for (let i = 0; i < mask.length; i++) out[i] = mask[i] ? 255 : 0;
  return out;
}

/** Grayscale (or RGBA) image bytes -> bitmap, thresholding at 128. */
export function grayToMask(data: Uint8ClampedArray, channels: 1 | 4 = 1): Uint8Array {
  const n = data.length / channels;
  const out = new Uint8Array(n);
  for (let i = 0; i < n; i++) out[i] = data[i * channels] >= 128 ? 1 : 0;
  return out;
}
