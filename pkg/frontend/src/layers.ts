// Layer stack and stroke tools.
//
// Four aligned layers at model resolution: the working image (RGB), the
// erase mask (0/1), the sketch (0/1) and the color strokes (RGB + 0/1
// support). Strokes rasterize as capsules: a pixel belongs to a stroke
// when its center lies within thickness/2 of the pointer segment, the same
// round-footprint rule the training mask sampler uses, so what the user
// draws is what the model was trained on.

export type Tool = "erase" | "sketch" | "colorBrush" | "eyedropper";

export interface LayerStack {
  width: number;
  height: number;
  image: Uint8Array;        // RGB, 3 bytes per pixel
  mask: Uint8Array;         // 0 | 1
  sketch: Uint8Array;       // 0 | 1
  colorRgb: Uint8Array;     // RGB, zero wherever support is 0
  colorSupport: Uint8Array; // 0 | 1
}

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

export function createLayerStack(width: number, height: number,
                                 image?: Uint8Array): LayerStack {
  const pixels = width * height;
  if (image && image.length !== pixels * 3) {
    throw new Error(`image is ${image.length} bytes, expected ${pixels * 3}`);
  }
  return {
    width,
    height,
    image: image ? image.slice() : new Uint8Array(pixels * 3),
    mask: new Uint8Array(pixels),
    sketch: new Uint8Array(pixels),
    colorRgb: new Uint8Array(pixels * 3),
    colorSupport: new Uint8Array(pixels),
  };
}

export function cloneLayers(stack: LayerStack): LayerStack {
  return {
    width: stack.width,
    height: stack.height,
    image: stack.image.slice(),
    mask: stack.mask.slice(),
    sketch: stack.sketch.slice(),
    colorRgb: stack.colorRgb.slice(),
    colorSupport: stack.colorSupport.slice(),
  };
}

/** Pixels whose centers lie within thickness/2 of the segment (x0,y0)-(x1,y1). */
export function strokeFootprint(width: number, height: number,
                                x0: number, y0: number, x1: number, y1: number,
                                thickness: number): Uint8Array {
  const out = new Uint8Array(width * height);
  const r = thickness / 2;
  const loX = Math.max(0, Math.floor(Math.min(x0, x1) - r));
  const hiX = Math.min(width - 1, Math.ceil(Math.max(x0, x1) + r));
  const loY = Math.max(0, Math.floor(Math.min(y0, y1) - r));
  const hiY = Math.min(height - 1, Math.ceil(Math.max(y0, y1) + r));
  const dx = x1 - x0;
  const dy = y1 - y0;
  const seg2 = dx * dx + dy * dy;
  const r2 = r * r + 1e-12;
  for (let y = loY; y <= hiY; y++) {
    for (let x = loX; x <= hiX; x++) {
      let px = x - x0;
      let py = y - y0;
      if (seg2 > 0) {
        const t = Math.min(1, Math.max(0, (px * dx + py * dy) / seg2));
        px = x - (x0 + t * dx);
        py = y - (y0 + t * dy);
      }
      if (px * px + py * py <= r2) out[y * width + x] = 1;
    }
  }
  return out;
}

class BoundedUndoStack {
  private entries: LayerStack[] = [];
  private redoEntries: LayerStack[] = [];

  constructor(private readonly depth: number) {}

  push(snapshot: LayerStack): void {
    this.entries.push(snapshot);
    if (this.entries.length > this.depth) this.entries.shift();
    this.redoEntries.length = 0;
  }

  undo(current: LayerStack): LayerStack | null {
    const prev = this.entries.pop();
    if (!prev) return null;
    this.redoEntries.push(current);
    return prev;
  }

  redo(current: LayerStack): LayerStack | null {
    const next = this.redoEntries.pop();
    if (!next) return null;
    this.entries.push(current);
    return next;
  }

  get undoDepth(): number {
    return this.entries.length;
  }
}

export interface StrokeEvent {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/**
 * Editor state machine: owns the layer stack, the active tool and the
 * bounded undo history. Pointer strokes are ignored (with a notice
 * callback) until an image is loaded.
 */
export class LayerEditor {
  stack: LayerStack | null = null;
  tool: Tool = "erase";
  brushSize = 8;
  brushColor: Rgb = { r: 200, g: 40, b: 40 };
  onNotice: (message: string) => void = () => {};

  private history = new BoundedUndoStack(50);

  loadImage(width: number, height: number, imageRgb: Uint8Array): void {
    this.stack = createLayerStack(width, height, imageRgb);
    this.history = new BoundedUndoStack(50);
  }

  get loaded(): boolean {
    return this.stack !== null;
  }

  /** Replace the working image (the "apply" action); edit layers reset. */
  applyComposite(imageRgb: Uint8Array): void {
    if (!this.stack) throw new Error("no image loaded");
    this.history.push(cloneLayers(this.stack));
    this.stack = createLayerStack(this.stack.width, this.stack.height, imageRgb);
  }

  beginStroke(): void {
    if (!this.stack) return;
    if (this.tool === "eyedropper") return;
    this.history.push(cloneLayers(this.stack));
  }

  stroke(event: StrokeEvent): void {
    if (!this.stack) {
      this.onNotice("load an image before drawing");
      return;
    }
    const s = this.stack;
    if (this.tool === "eyedropper") {
      const x = Math.min(s.width - 1, Math.max(0, Math.round(event.x1)));
      const y = Math.min(s.height - 1, Math.max(0, Math.round(event.y1)));
      const at = (y * s.width + x) * 3;
      this.brushColor = { r: s.image[at], g: s.image[at + 1], b: s.image[at + 2] };
      return;
    }
    const footprint = strokeFootprint(
      s.width, s.height, event.x0, event.y0, event.x1, event.y1, this.brushSize);
    for (let i = 0; i < footprint.length; i++) {
      if (!footprint[i]) continue;
      if (this.tool === "erase") {
        s.mask[i] = 1;
      } else if (this.tool === "sketch") {
        s.sketch[i] = 1;
      } else {
        s.colorSupport[i] = 1;
        s.colorRgb[i * 3] = this.brushColor.r;
        s.colorRgb[i * 3 + 1] = this.brushColor.g;
        s.colorRgb[i * 3 + 2] = this.brushColor.b;
      }
    }
  }

  undo(): boolean {
    if (!this.stack) return false;
    const prev = this.history.undo(this.stack);
    if (!prev) return false;
    this.stack = prev;
    return true;
  }

  redo(): boolean {
    if (!this.stack) return false;
    const next = this.history.redo(this.stack);
    if (!next) return false;
    this.stack = next;
    return true;
  }

  get undoDepth(): number {
    return this.history.undoDepth;
  }

  clearEdits(): void {
    if (!this.stack) return;
    this.history.push(cloneLayers(this.stack));
    const image = this.stack.image;
    this.stack = createLayerStack(this.stack.width, this.stack.height, image);
  }
}
