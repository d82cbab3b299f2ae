// Wire client for the edit service.
//
// POST /edit takes base64 PNG layers: image (RGB), mask and sketch
// (grayscale, >=128 marks set pixels), color (RGBA, alpha > 0 marks stroke
// support). The response carries the composite as a base64 RGB PNG. All
// encodings are lossless, so layer round trips are bit-identical.

import { base64ToBytes, bytesToBase64, decodePng, encodePng } from "./png.js";
import type { LayerStack } from "./layers.js";

export interface EditRequestBody {
  image: string;
  mask: string;
  sketch: string;
  color: string;
  seed?: number;
}

export interface CompositeImage {
  width: number;
  height: number;
  rgb: Uint8Array;
  elapsedMs: number;
}

export interface ServiceMeta {
  trained_size: number;
  size_divisor: number;
}

export type FetchLike = (url: string, init?: {
  method?: string;
  headers?: Record<string, string>;
  body?: string;
}) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export async function encodeEditRequest(stack: LayerStack,
                                        seed?: number): Promise<EditRequestBody> {
  const { width, height } = stack;
  const pixels = width * height;
  const maskBytes = new Uint8Array(pixels);
  const sketchBytes = new Uint8Array(pixels);
  for (let i = 0; i < pixels; i++) {
    maskBytes[i] = stack.mask[i] ? 255 : 0;
    sketchBytes[i] = stack.sketch[i] ? 255 : 0;
  }
  const colorRgba = new Uint8Array(pixels * 4);
  for (let i = 0; i < pixels; i++) {
    colorRgba[i * 4] = stack.colorRgb[i * 3];
    colorRgba[i * 4 + 1] = stack.colorRgb[i * 3 + 1];
    colorRgba[i * 4 + 2] = stack.colorRgb[i * 3 + 2];
    colorRgba[i * 4 + 3] = stack.colorSupport[i] ? 255 : 0;
  }
  const body: EditRequestBody = {
    image: bytesToBase64(await encodePng(stack.image, width, height, 3)),
    mask: bytesToBase64(await encodePng(maskBytes, width, height, 1)),
    sketch: bytesToBase64(await encodePng(sketchBytes, width, height, 1)),
    color: bytesToBase64(await encodePng(colorRgba, width, height, 4)),
  };
  if (seed !== undefined) body.seed = seed;
  return body;
}

/** Inverse of encodeEditRequest; used by tests to prove bit-exactness. */
export async function decodeEditRequest(body: EditRequestBody): Promise<LayerStack> {
  const image = await decodePng(base64ToBytes(body.image));
  const mask = await decodePng(base64ToBytes(body.mask));
  const sketch = await decodePng(base64ToBytes(body.sketch));
  const color = await decodePng(base64ToBytes(body.color));
  const { width, height } = image;
  if (mask.width !== width || sketch.width !== width || color.width !== width ||
      mask.height !== height || sketch.height !== height || color.height !== height) {
    throw new Error("layer dimensions disagree");
  }
  const pixels = width * height;
  const stack: LayerStack = {
    width,
    height,
    image: image.data.slice(),
    mask: new Uint8Array(pixels),
    sketch: new Uint8Array(pixels),
    colorRgb: new Uint8Array(pixels * 3),
    colorSupport: new Uint8Array(pixels),
  };
  for (let i = 0; i < pixels; i++) {
    stack.mask[i] = mask.data[i] >= 128 ? 1 : 0;
    stack.sketch[i] = sketch.data[i] >= 128 ? 1 : 0;
    const alpha = color.data[i * 4 + 3];
    if (alpha > 0) {
      stack.colorSupport[i] = 1;
      stack.colorRgb[i * 3] = color.data[i * 4];
      stack.colorRgb[i * 3 + 1] = color.data[i * 4 + 1];
      stack.colorRgb[i * 3 + 2] = color.data[i * 4 + 2];
    }
  }
  return stack;
}

export class ServiceError extends Error {
  constructor(message: string, readonly status: number, readonly retriable: boolean) {
    super(message);
  }
}

export async function fetchMeta(fetchFn: FetchLike, baseUrl = ""): Promise<ServiceMeta> {
  const response = await fetchFn(`${baseUrl}/meta`);
  if (!response.ok) {
    throw new ServiceError(`meta failed (${response.status})`, response.status,
                           response.status >= 500);
  }
  return (await response.json()) as ServiceMeta;
}

export async function postEdit(fetchFn: FetchLike, body: EditRequestBody,
                               baseUrl = ""): Promise<CompositeImage> {
  let response;
  try {
    response = await fetchFn(`${baseUrl}/edit`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  } catch (error) {
    throw new ServiceError(`service unreachable: ${error}`, 0, true);
  }
  if (!response.ok) {
    const detail = JSON.stringify(await response.json().catch(() => ({})));
    throw new ServiceError(`edit failed (${response.status}): ${detail}`,
                           response.status, response.status >= 500);
  }
  const payload = (await response.json()) as {
    composite: string; width: number; height: number; elapsed_ms: number;
  };
  const decoded = await decodePng(base64ToBytes(payload.composite));
  if (decoded.channels !== 3) throw new ServiceError("composite is not RGB", 0, false);
  return {
    width: decoded.width,
    height: decoded.height,
    rgb: decoded.data,
    elapsedMs: payload.elapsed_ms,
  };
}

/**
 * At most one edit result is live at a time: every submission gets a new
 * id and responses from superseded submissions are dropped.
 */
export class EditSession {
  private nextId = 0;
  private liveId = -1;

  constructor(private readonly fetchFn: FetchLike,
              private readonly baseUrl = "") {}

  async submit(stack: LayerStack, seed?: number): Promise<CompositeImage | null> {
    const id = this.nextId++;
    this.liveId = id;
    const body = await encodeEditRequest(stack, seed);
    const composite = await postEdit(this.fetchFn, body, this.baseUrl);
    if (id !== this.liveId) return null; // a newer submission superseded this one
    return composite;
  }
}

export function maskIsEmpty(stack: LayerStack): boolean {
  for (let i = 0; i < stack.mask.length; i++) {
    if (stack.mask[i]) return false;
  }
  return true;
}
