"""PNG load/save for the layer formats the pipeline and service speak.

Conventions: RGB images map linearly between uint8 [0, 255] and float
[-1, 1]; masks and sketches threshold at 128; color-stroke layers are RGBA
where alpha > 0 marks stroke support.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

__all__ = [
    "image_to_float", "float_to_image",
    "load_image", "save_image", "encode_image", "decode_image",
    "decode_image_uint8", "encode_image_uint8",
    "load_binary", "save_binary", "encode_binary", "decode_binary",
    "decode_color_strokes", "encode_color_strokes",
]


def image_to_float(arr: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float32 [-1,1]."""
    return (arr.astype(np.float32) / 127.5) - 1.0


def float_to_image(arr: np.ndarray) -> np.ndarray:
    """float [-1,1] -> uint8, clipping and rounding half away from zero."""
    scaled = (np.clip(arr, -1.0, 1.0) + 1.0) * 127.5
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return image_to_float(np.asarray(im.convert("RGB")))


def save_image(path, arr: np.ndarray) -> None:
    Image.fromarray(float_to_image(arr), mode="RGB").save(path, format="PNG")


def encode_image(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(float_to_image(arr), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return image_to_float(np.asarray(im.convert("RGB")))


def decode_image_uint8(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB")).copy()


def encode_image_uint8(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_binary(path) -> np.ndarray:
    """Read a mask/sketch PNG (any mode) to a {0,1} uint8 map."""
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def save_binary(path, mask: np.ndarray) -> None:
    Image.fromarray((mask > 0)).save(path, format="PNG", bits=1)


def encode_binary(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray((mask > 0)).save(buf, format="PNG", bits=1)
    return buf.getvalue()


def decode_binary(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


def decode_color_strokes(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    """RGBA PNG -> ([-1,1] float32 H x W x 3 zeroed outside support, support)."""
    with Image.open(io.BytesIO(data)) as im:
        rgba = np.asarray(im.convert("RGBA"))
    support = (rgba[..., 3] > 0).astype(np.uint8)
    rgb = image_to_float(rgba[..., :3]) * support[..., None]
    return rgb.astype(np.float32), support


def encode_color_strokes(rgb: np.ndarray, support: np.ndarray) -> bytes:
    rgba = np.dstack([float_to_image(rgb), (support > 0).astype(np.uint8) * 255])
    buf = io.BytesIO()
    Image.fromarray(rgba, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()
