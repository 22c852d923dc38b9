/**
 * Three-page single-page app: brightness adjustment, defect generation with
 * a drawable mask canvas, and the staged image-processing results.
 */

import { ApiClient } from "./api";
import { clampFactor, previewBrightness } from "./brightness";
import {
  beginStroke,
  canExport,
  clearStrokes,
  createEditor,
  extendStroke,
  renderMask,
  undoStroke,
  type EditorState,
} from "./editorState";
import { buildGallery } from "./gallery";
import { maskToGray } from "./maskRaster";
import { pollJob } from "./polling";

const api = new ApiClient("");

interface AppState {
  editor: EditorState;
  originalImage: HTMLImageElement | null;
  workingImageId: string | null;
  maskId: string | null;
}

const app: AppState = {
  editor: createEditor(0, 0),
  originalImage: null,
  workingImageId: null,
  maskId: null,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showPage(name: string): void {
  for (const page of document.querySelectorAll<HTMLElement>(".page")) {
    page.style.display = page.dataset.page === name ? "block" : "none";
  }
  for (const tab of document.querySelectorAll<HTMLElement>(".tab")) {
    tab.classList.toggle("active", tab.dataset.target === name);
  }
}

function setStatus(message: string): void {
  el<HTMLElement>("status").textContent = message;
}

// -- brightness page ---------------------------------------------------------

function drawBrightnessPreview(): void {
  const img = app.originalImage;
  if (!img) return;
  const factor = clampFactor(parseFloat(el<HTMLInputElement>("factor").value));
  el<HTMLElement>("factor-label").textContent = factor.toFixed(2);
  const canvas = el<HTMLCanvasElement>("preview-canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
  data.data.set(previewBrightness(data.data, factor));
  ctx.putImageData(data, 0, 0);
}

async function handleUpload(file: File): Promise<void> {
  setStatus("uploading image...");
  const imageId = await api.uploadImage(file);
  app.workingImageId = imageId;
  const img = new Image();
  img.onload = () => {
    app.originalImage = img;
    app.editor = createEditor(img.naturalWidth, img.naturalHeight);
    app.editor.imageId = imageId;
    drawBrightnessPreview();
    drawEditor();
    setStatus(`image ${imageId.slice(0, 8)} loaded (${img.naturalWidth}x${img.naturalHeight})`);
  };
  img.src = api.imageUrl(imageId);
}

async function applyBrightness(): Promise<void> {
  if (!app.workingImageId) return;
  const factor = clampFactor(parseFloat(el<HTMLInputElement>("factor").value));
  setStatus("darkening on server...");
  const newId = await api.simulateBrightness(app.editor.imageId ?? app.workingImageId, factor);
  app.workingImageId = newId;
  app.editor.brightnessFactor = factor;
  setStatus(`darkened copy ${newId.slice(0, 8)} will be restored`);
}

// -- defect page --------------------------------------------------------------

function drawEditor(): void {
  const img = app.originalImage;
  if (!img) return;
  const canvas = el<HTMLCanvasElement>("editor-canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  const mask = renderMask(app.editor);
  const overlay = ctx.getImageData(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i]) {
      overlay.data[i * 4] = 255;
      overlay.data[i * 4 + 1] = 64;
      overlay.data[i * 4 + 2] = 64;
    }
  }
  ctx.putImageData(overlay, 0, 0);
}

function canvasPoint(canvas: HTMLCanvasElement, ev: PointerEvent) {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
}

async function exportMask(): Promise<void> {
  if (!canExport(app.editor)) {
    setStatus("draw at least one stroke before exporting the mask");
    return;
  }
  const { width, height } = app.editor;
  const gray = maskToGray(renderMask(app.editor));
  const canvas = document.createElement("canvas");
  canvas.width = width;
  canvas.height = height;
  const ctx = canvas.getContext("2d")!;
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < gray.length; i++) {
    rgba[i * 4] = rgba[i * 4 + 1] = rgba[i * 4 + 2] = gray[i];
    rgba[i * 4 + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, width), 0, 0);
  const blob: Blob = await new Promise((resolve) => canvas.toBlob((b) => resolve(b!), "image/png"));
  app.maskId = await api.uploadMask(blob);
  setStatus(`mask ${app.maskId.slice(0, 8)} uploaded`);
}

async function requestRandomMask(): Promise<void> {
  if (!app.editor.imageId) return;
  app.maskId = await api.randomMask({
    image_id: app.editor.imageId,
    family: el<HTMLSelectElement>("mask-family").value,
    coverage: parseFloat(el<HTMLInputElement>("mask-coverage").value),
    seed: Math.floor(Math.random() * 1e6),
  });
  setStatus(`random mask ${app.maskId.slice(0, 8)} ready`);
}

async function requestAutoMask(): Promise<void> {
  const imageId = app.workingImageId ?? app.editor.imageId;
  if (!imageId) return;
  setStatus("detecting defects...");
  app.maskId = await api.autoMask(imageId);
  setStatus(`auto mask ${app.maskId.slice(0, 8)} ready`);
}

// -- processing page ----------------------------------------------------------

async function runRestore(): Promise<void> {
  const imageId = app.workingImageId ?? app.editor.imageId;
  if (!imageId) {
    setStatus("upload an image first");
    return;
  }
  const request = app.maskId
    ? { image_id: imageId, mask_id: app.maskId }
    : { image_id: imageId, auto: { lambda_g: 3.0, lambda_p: 2.0 } };
  const jobId = await api.submitRestore(request);
  app.editor.activeJobId = jobId;
  showPage("processing");
  const progress = el<HTMLElement>("job-progress");
  const job = await pollJob(
    (id) => api.getJob(id),
    jobId,
    (view) => {
      progress.textContent = `${view.state} ${(view.progress * 100).toFixed(0)}%`;
    },
  );
  const gallery = buildGallery(job, api.stageUrl);
  const banner = el<HTMLElement>("error-banner");
  banner.style.display = gallery.error ? "block" : "none";
  banner.textContent = gallery.error ?? "";
  const holder = el<HTMLElement>("gallery");
  holder.innerHTML = "";
  for (const item of gallery.items) {
    const fig = document.createElement("figure");
    const image = document.createElement("img");
    image.src = item.url;
    const caption = document.createElement("figcaption");
    caption.textContent = item.stage;
    fig.append(image, caption);
    holder.append(fig);
  }
  if (gallery.maskUrl) {
    const toggle = el<HTMLInputElement>("mask-toggle");
    toggle.style.display = "inline-block";
    toggle.onchange = () => {
      el<HTMLImageElement>("mask-overlay").style.display = toggle.checked ? "block" : "none";
    };
    el<HTMLImageElement>("mask-overlay").src = gallery.maskUrl;
  }
}

// -- wiring --------------------------------------------------------------------

export function bootstrap(): void {
  for (const tab of document.querySelectorAll<HTMLElement>(".tab")) {
    tab.addEventListener("click", () => showPage(tab.dataset.target!));
  }
  el<HTMLInputElement>("file-input").addEventListener("change", (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void handleUpload(file);
  });
  el<HTMLInputElement>("factor").addEventListener("input", drawBrightnessPreview);
  el<HTMLButtonElement>("apply-brightness").addEventListener("click", () => void applyBrightness());

  const canvas = el<HTMLCanvasElement>("editor-canvas");
  let drawing = false;
  canvas.addEventListener("pointerdown", (ev) => {
    drawing = true;
    canvas.setPointerCapture(ev.pointerId);
    app.editor.brushRadius = parseInt(el<HTMLInputElement>("brush-radius").value, 10);
    app.editor = beginStroke(app.editor, canvasPoint(canvas, ev));
    drawEditor();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!drawing) return;
    app.editor = extendStroke(app.editor, canvasPoint(canvas, ev));
    drawEditor();
  });
  canvas.addEventListener("pointerup", () => {
    drawing = false;
  });
  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    app.editor = undoStroke(app.editor);
    drawEditor();
  });
  el<HTMLButtonElement>("clear").addEventListener("click", () => {
    app.editor = clearStrokes(app.editor);
    drawEditor();
  });
  el<HTMLButtonElement>("export-mask").addEventListener("click", () => void exportMask());
  el<HTMLButtonElement>("random-mask").addEventListener("click", () => void requestRandomMask());
  el<HTMLButtonElement>("auto-mask").addEventListener("click", () => void requestAutoMask());
  el<HTMLButtonElement>("run-restore").addEventListener("click", () => void runRestore());
  showPage("brightness");
}

if (typeof document !== "undefined" && document.getElementById("file-input")) {
  bootstrap();
}
