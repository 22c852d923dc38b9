/**
 * Defect-editor state: stroke history with undo, current brush, brightness
 * selection and the active job.  State serializes losslessly to JSON; the
 * mask bitmap is always derived by replaying the stroke list, so any two
 * states with equal strokes render identical masks.
 */

import { rasterizeStrokes, type Point, type Stroke } from "./maskRaster";

export interface EditorState {
  imageId: string | null;
  width: number;
  height: number;
  brushRadius: number;
  strokes: Stroke[];
  brightnessFactor: number;
  activeJobId: string | null;
}

export function createEditor(width: number, height: number): EditorState {
  return {
    imageId: null,
    width,
    height,
    brushRadius: 8,
    strokes: [],
    brightnessFactor: 1.0,
    activeJobId: null,
  };
}

export function beginStroke(state: EditorState, point: Point): EditorState {
  const stroke: Stroke = { points: [point], radius: state.brushRadius };
  return { ...state, strokes: [...state.strokes, stroke] };
}

export function extendStroke(state: EditorState, point: Point): EditorState {
  if (state.strokes.length === 0) return state;
  const strokes = state.strokes.slice();
  const last = strokes[strokes.length - 1];
  strokes[strokes.length - 1] = { ...last, points: [...last.points, point] };
  return { ...state, strokes };
}

export function undoStroke(state: EditorState): EditorState {
  return { ...state, strokes: state.strokes.slice(0, -1) };
}

export function clearStrokes(state: EditorState): EditorState {
  return { ...state, strokes: [] };
}

export function renderMask(state: EditorState): Uint8Array {
  return rasterizeStrokes(state.strokes, state.width, state.height);
}

export function canExport(state: EditorState): boolean {
  let touched = false;
  for (const v of renderMask(state)) {
    if (v) {
      touched = true;
      break;
    }
  }
  return touched;
}

export function serializeEditor(state: EditorState): string {
  return JSON.stringify(state);
}

export function deserializeEditor(text: string): EditorState {
  const raw = JSON.parse(text) as EditorState;
  return {
    imageId: raw.imageId ?? null,
    width: raw.width,
    height: raw.height,
    brushRadius: raw.brushRadius,
    strokes: raw.strokes.map((s) => ({
      radius: s.radius,
      points: s.points.map((p) => ({ x: p.x, y: p.y })),
    })),
    brightnessFactor: raw.brightnessFactor,
    activeJobId: raw.activeJobId ?? null,
  };
}
