/**
 * Client-side brightness preview with the server's quantization semantics:
 * the server multiplies unit-range samples by the factor and rounds half-up
 * back to bytes, so the preview computes round(byte * factor) per channel.
 */

export function previewByte(byte: number, factor: number): number {
  return Math.min(255, Math.floor(byte * factor + 0.5));
}

/** Darken RGBA canvas data in place-safe fashion (alpha untouched). */
export function previewBrightness(data: Uint8ClampedArray, factor: number): Uint8ClampedArray {
  if (!(factor > 0 && factor <= 1)) {
    throw new Error(`brightness factor must be in (0, 1], got ${factor}`);
  }
  const out = new Uint8ClampedArray(data.length);
  for (let i = 0; i < data.length; i += 4) {
    out[i] = previewByte(data[i], factor);
    out[i + 1] = previewByte(data[i + 1], factor);
    out[i + 2] = previewByte(data[i + 2], factor);
    out[i + 3] = data[i + 3];
  }
  return out;
}

export function clampFactor(value: number): number {
  if (!(value > 0)) return 0.01;
  return Math.min(value, 1.0);
}
