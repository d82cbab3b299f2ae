"""Inference service for interactive edits.

Loads a checkpoint into an immutable handle and serves:

* POST /edit   JSON {image, mask, sketch?, color?, seed?} of base64 PNG
               layers -> JSON {composite (base64 PNG), width, height,
               elapsed_ms, seed}
* GET /health  model/version/config echo
* GET /meta    expected sizes and layer encodings

Layers: image is 8-bit RGB; mask and sketch are grayscale thresholded at
128; color is RGBA with alpha > 0 marking stroke support. Pixels outside
the mask are copied from the request image byte for byte. Images whose
dimensions the network cannot consume are reflect-padded to the next valid
size and cropped back.
"""

# No `from __future__ import annotations` here: the request model is defined
# inside create_app and FastAPI must resolve its annotations at runtime.

import base64
import binascii
import time
from dataclasses import dataclass

import numpy as np
import torch

from . import pngio
from .checkpoint import CheckpointError, read_checkpoint, restore_module_arrays
from .dataprep import ColorMap, SketchMap, assemble_batch
from .maskgen import MaskMap
from .networks import Generator, batch_to_tensor
from .trainer import TrainConfig

__all__ = ["EditModel", "load_model", "edit", "DimensionMismatch", "create_app"]


class DimensionMismatch(ValueError):
    """Request layers disagree on size (a 422-class client error)."""


@dataclass(frozen=True)
class EditModel:
    """Immutable inference handle: a frozen generator plus its config."""

    generator: Generator
    config: TrainConfig
    step: int

    @property
    def divisor(self) -> int:
        return 2 ** self.config.generator.depth

    @property
    def trained_size(self) -> int:
        return self.config.imageSize


def load_model(checkpoint_path) -> EditModel:
    """Load the generator from a checkpoint in eval mode."""
    bundle = read_checkpoint(checkpoint_path)
    config = TrainConfig.from_dict(bundle.config)
    generator = Generator(config.generator)
    restore_module_arrays(generator, bundle.group("generator/"))
    generator.eval()
    for p in generator.parameters():
        p.requires_grad_(False)
    return EditModel(generator=generator, config=config, step=bundle.step)


def _pad_to_divisor(array: np.ndarray, divisor: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = array.shape[:2]
    pad_h = (-h) % divisor
    pad_w = (-w) % divisor
    if pad_h == 0 and pad_w == 0:
        return array, (0, 0)
    pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, pad, mode="reflect"), (pad_h, pad_w)


def edit(model: EditModel, image: np.ndarray, mask: np.ndarray,
         sketch: np.ndarray | None = None, color: np.ndarray | None = None,
         seed: int | None = None) -> tuple[np.ndarray, float]:
    """Run one edit; returns (composite uint8 H x W x 3, elapsed ms).

    `image` is uint8 RGB; `mask` and `sketch` are {0,1} maps; `color` is a
    [-1, 1] float map already zeroed outside its strokes. Bytes outside the
    mask are returned untouched.
    """
    start = time.perf_counter()
    if image.ndim != 3 or image.shape[-1] != 3 or image.dtype != np.uint8:
        raise DimensionMismatch("image must be uint8 H x W x 3")
    h, w = image.shape[:2]
    if mask.shape != (h, w):
        raise DimensionMismatch(f"mask is {mask.shape}, image is {(h, w)}")
    sketch = np.zeros((h, w), dtype=np.uint8) if sketch is None else sketch
    color = np.zeros((h, w, 3), dtype=np.float32) if color is None else color
    if sketch.shape != (h, w):
        raise DimensionMismatch(f"sketch is {sketch.shape}, image is {(h, w)}")
    if color.shape[:2] != (h, w):
        raise DimensionMismatch(f"color is {color.shape[:2]}, image is {(h, w)}")

    image_f = pngio.image_to_float(image)
    divisor = model.divisor
    image_p, _ = _pad_to_divisor(image_f, divisor)
    mask_p, _ = _pad_to_divisor(mask.astype(np.uint8), divisor)
    sketch_p, _ = _pad_to_divisor(sketch.astype(np.uint8), divisor)
    color_p, _ = _pad_to_divisor(color.astype(np.float32), divisor)
    # Padding must not mark new erased pixels.
    mask_p[h:, :] = 0
    mask_p[:, w:] = 0

    rng = np.random.default_rng(seed if seed is not None else None)
    support = (np.abs(color_p).sum(axis=-1) > 0).astype(np.uint8)
    batch = assemble_batch(image_p, MaskMap(mask_p), SketchMap(sketch_p),
                           ColorMap(color_p * support[..., None], support), rng)
    with torch.no_grad():
        out = model.generator(batch_to_tensor(batch.stacked()))
    gen = out[0].numpy().transpose(1, 2, 0)[:h, :w]

    composite = image.copy()
    inside = mask.astype(bool)
    composite[inside] = pngio.float_to_image(gen)[inside]
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    return composite, elapsed_ms


def _decode_b64(field: str, value: str) -> bytes:
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise DimensionMismatch(f"{field}: invalid base64 payload") from exc


def create_app(model: EditModel | None, frontend_dir=None):
    """Build the FastAPI app around an already-loaded model handle."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import JSONResponse
    from pydantic import BaseModel

    class EditRequest(BaseModel):
        image: str
        mask: str
        sketch: str | None = None
        color: str | None = None
        seed: int | None = None

    app = FastAPI(title="faceedit service")

    @app.get("/health")
    def health():
        if model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return {"status": "ok", "model_step": model.step,
                "config": model.config.to_dict()}

    @app.get("/meta")
    def meta():
        if model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return {
            "trained_size": model.trained_size,
            "size_divisor": model.divisor,
            "layers": {
                "image": "base64 PNG, 8-bit RGB",
                "mask": "base64 PNG, grayscale; >=128 marks erased pixels",
                "sketch": "base64 PNG, grayscale; >=128 marks stroke pixels",
                "color": "base64 PNG, RGBA; alpha > 0 marks stroke support",
                "composite": "base64 PNG, 8-bit RGB",
            },
        }

    @app.post("/edit")
    def do_edit(req: EditRequest):
        if model is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        try:
            image = pngio.decode_image_uint8(_decode_b64("image", req.image))
            mask = pngio.decode_binary(_decode_b64("mask", req.mask))
            sketch = (pngio.decode_binary(_decode_b64("sketch", req.sketch))
                      if req.sketch else None)
            color = (pngio.decode_color_strokes(_decode_b64("color", req.color))[0]
                     if req.color else None)
            composite, elapsed_ms = edit(model, image, mask, sketch, color, req.seed)
        except DimensionMismatch as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except Exception as exc:  # malformed PNG payloads and the like
            raise HTTPException(status_code=422, detail=f"bad request: {exc}")
        png = pngio.encode_image_uint8(composite)
        return JSONResponse({
            "composite": base64.b64encode(png).decode("ascii"),
            "width": int(composite.shape[1]),
            "height": int(composite.shape[0]),
            "elapsed_ms": elapsed_ms,
            "seed": req.seed,
        })

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")
    return app


def serve(checkpoint_path, host: str = "127.0.0.1", port: int = 8000,
          frontend_dir=None) -> None:
    import uvicorn

    model = load_model(checkpoint_path)
    app = create_app(model, frontend_dir=frontend_dir)
    uvicorn.run(app, host=host, port=port)
