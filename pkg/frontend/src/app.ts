// Browser wiring: canvases, tools, and the edit round trip.

import { LayerEditor, Tool } from "./layers.js";
import {
  CompositeImage,
  EditSession,
  ServiceError,
  fetchMeta,
  maskIsEmpty,
} from "./client.js";
import { decodePng } from "./png.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const editor = new LayerEditor();
const session = new EditSession((url, init) => fetch(url, init));
let modelSize = 512;
let lastComposite: CompositeImage | null = null;

function notice(message: string, retriable = false): void {
  const banner = $("notice");
  banner.textContent = retriable ? `${message} — try again` : message;
  banner.classList.remove("hidden");
  window.setTimeout(() => banner.classList.add("hidden"), 4000);
}

editor.onNotice = notice;

function renderStack(): void {
  const canvas = $("editor-canvas") as unknown as HTMLCanvasElement;
  const stack = editor.stack;
  if (!stack) return;
  canvas.width = stack.width;
  canvas.height = stack.height;
  const ctx = canvas.getContext("2d")!;
  const pixels = stack.width * stack.height;
  const rgba = new Uint8ClampedArray(pixels * 4);
  for (let i = 0; i < pixels; i++) {
    let r = stack.image[i * 3];
    let g = stack.image[i * 3 + 1];
    let b = stack.image[i * 3 + 2];
    if (stack.mask[i]) {
      r = 0.35 * r + 0.65 * 255;
      g = 0.35 * g;
      b = 0.35 * b;
    }
    if (stack.colorSupport[i]) {
      r = stack.colorRgb[i * 3];
      g = stack.colorRgb[i * 3 + 1];
      b = stack.colorRgb[i * 3 + 2];
    }
    if (stack.sketch[i]) {
      r = g = b = 245;
    }
    rgba[i * 4] = r;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = b;
    rgba[i * 4 + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, stack.width, stack.height), 0, 0);
}

function renderComposite(composite: CompositeImage): void {
  const canvas = $("result-canvas") as unknown as HTMLCanvasElement;
  canvas.width = composite.width;
  canvas.height = composite.height;
  const ctx = canvas.getContext("2d")!;
  const pixels = composite.width * composite.height;
  const rgba = new Uint8ClampedArray(pixels * 4);
  for (let i = 0; i < pixels; i++) {
    rgba[i * 4] = composite.rgb[i * 3];
    rgba[i * 4 + 1] = composite.rgb[i * 3 + 1];
    rgba[i * 4 + 2] = composite.rgb[i * 3 + 2];
    rgba[i * 4 + 3] = 255;
  }
  ctx.putImageData(new ImageData(rgba, composite.width, composite.height), 0, 0);
  $("latency").textContent = `${composite.elapsedMs.toFixed(0)} ms`;
  $("apply").removeAttribute("disabled");
}

async function loadImageFile(file: File): Promise<void> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  let decoded;
  try {
    decoded = await decodePng(bytes);
  } catch {
    notice("only PNG images are supported");
    return;
  }
  // Resize to the model's working resolution via an offscreen canvas so
  // strokes are drawn at the resolution the network consumes.
  const src = document.createElement("canvas");
  src.width = decoded.width;
  src.height = decoded.height;
  const srcCtx = src.getContext("2d")!;
  const rgba = new Uint8ClampedArray(decoded.width * decoded.height * 4);
  for (let i = 0; i < decoded.width * decoded.height; i++) {
    const c = decoded.channels;
    rgba[i * 4] = decoded.data[i * c];
    rgba[i * 4 + 1] = decoded.data[i * c + (c >= 3 ? 1 : 0)];
    rgba[i * 4 + 2] = decoded.data[i * c + (c >= 3 ? 2 : 0)];
    rgba[i * 4 + 3] = 255;
  }
  srcCtx.putImageData(new ImageData(rgba, decoded.width, decoded.height), 0, 0);
  const dst = document.createElement("canvas");
  dst.width = modelSize;
  dst.height = modelSize;
  const dstCtx = dst.getContext("2d")!;
  dstCtx.drawImage(src, 0, 0, modelSize, modelSize);
  const scaled = dstCtx.getImageData(0, 0, modelSize, modelSize).data;
  const rgb = new Uint8Array(modelSize * modelSize * 3);
  for (let i = 0; i < modelSize * modelSize; i++) {
    rgb[i * 3] = scaled[i * 4];
    rgb[i * 3 + 1] = scaled[i * 4 + 1];
    rgb[i * 3 + 2] = scaled[i * 4 + 2];
  }
  editor.loadImage(modelSize, modelSize, rgb);
  lastComposite = null;
  $("apply").setAttribute("disabled", "");
  renderStack();
}

function canvasPoint(canvas: HTMLCanvasElement, event: PointerEvent) {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * canvas.width,
    y: ((event.clientY - rect.top) / rect.height) * canvas.height,
  };
}

function wireCanvas(): void {
  const canvas = $("editor-canvas") as unknown as HTMLCanvasElement;
  let drawing = false;
  let last = { x: 0, y: 0 };
  canvas.addEventListener("pointerdown", (event) => {
    if (!editor.loaded) {
      notice("load an image before drawing");
      return;
    }
    drawing = true;
    last = canvasPoint(canvas, event);
    editor.beginStroke();
    editor.stroke({ x0: last.x, y0: last.y, x1: last.x, y1: last.y });
    renderStack();
    canvas.setPointerCapture(event.pointerId);
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!drawing) return;
    const point = canvasPoint(canvas, event);
    editor.stroke({ x0: last.x, y0: last.y, x1: point.x, y1: point.y });
    last = point;
    renderStack();
  });
  const stop = () => { drawing = false; };
  canvas.addEventListener("pointerup", stop);
  canvas.addEventListener("pointercancel", stop);
}

async function submit(): Promise<void> {
  if (!editor.stack) {
    notice("load an image first");
    return;
  }
  if (maskIsEmpty(editor.stack)) {
    notice("erase something first: the mask is empty");
  }
  const seedText = ($("seed") as unknown as HTMLInputElement).value.trim();
  const seed = seedText ? Number(seedText) : undefined;
  $("submit").setAttribute("disabled", "");
  try {
    const composite = await session.submit(editor.stack, seed);
    if (composite) {
      lastComposite = composite;
      renderComposite(composite);
    }
  } catch (error) {
    if (error instanceof ServiceError) {
      notice(error.message, error.retriable);
    } else {
      notice(String(error));
    }
  } finally {
    $("submit").removeAttribute("disabled");
  }
}

function applyComposite(): void {
  if (!lastComposite || !editor.stack) return;
  editor.applyComposite(lastComposite.rgb);
  renderStack();
}

function wireControls(): void {
  for (const tool of ["erase", "sketch", "colorBrush", "eyedropper"] as Tool[]) {
    $(`tool-${tool}`).addEventListener("click", () => {
      editor.tool = tool;
      document.querySelectorAll(".tool").forEach((el) => el.classList.remove("active"));
      $(`tool-${tool}`).classList.add("active");
    });
  }
  ($("brush-size") as unknown as HTMLInputElement).addEventListener("input", (e) => {
    editor.brushSize = Number((e.target as HTMLInputElement).value);
  });
  ($("brush-color") as unknown as HTMLInputElement).addEventListener("input", (e) => {
    const hex = (e.target as HTMLInputElement).value;
    editor.brushColor = {
      r: parseInt(hex.slice(1, 3), 16),
      g: parseInt(hex.slice(3, 5), 16),
      b: parseInt(hex.slice(5, 7), 16),
    };
  });
  $("undo").addEventListener("click", () => { editor.undo(); renderStack(); });
  $("redo").addEventListener("click", () => { editor.redo(); renderStack(); });
  $("clear").addEventListener("click", () => { editor.clearEdits(); renderStack(); });
  $("submit").addEventListener("click", () => void submit());
  $("apply").addEventListener("click", applyComposite);
  ($("file") as unknown as HTMLInputElement).addEventListener("change", (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (file) void loadImageFile(file);
  });
}

async function boot(): Promise<void> {
  wireControls();
  wireCanvas();
  try {
    const meta = await fetchMeta((url, init) => fetch(url, init));
    modelSize = meta.trained_size;
    $("meta").textContent = `model ${modelSize}x${modelSize}`;
  } catch {
    notice("service metadata unavailable; using 512x512", true);
  }
}

void boot();
