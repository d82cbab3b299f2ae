"""Sketch/color conditioning maps and the 9-channel edit batch.

The training inputs stack five layers in a fixed channel order:

    incomplete image (3) | sketch (1) | color strokes (3) | mask (1) | noise (1)

`extract_sketch` and `extract_color_domain` turn a source image into the
dense sketch/color domains; stroke masking then simulates the sparse
strokes a user would draw. Records serialize batches to the FEB1 binary
layout documented at `write_record`.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageops import (
    GradientEdgeBackend,
    KMeansSegmenter,
    binary_close,
    bilateral_filter,
    equalize_histogram,
    lower_median,
    median_filter3,
    remove_small_components,
    rgb_to_gray,
)
from .maskgen import MaskMap

__all__ = [
    "SketchMap",
    "ColorMap",
    "EditBatch",
    "extract_sketch",
    "extract_color_domain",
    "apply_color_strokes",
    "assemble_batch",
    "write_record",
    "read_record",
    "load_training_images",
    "default_eye_positions",
]

RECORD_MAGIC = b"FEB1"
CHANNEL_ORDER = ("incomplete", "incomplete", "incomplete", "sketch",
                 "color", "color", "color", "mask", "noise")


@dataclass
class SketchMap:
    """Binary edge map describing structure inside the erased region."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError("sketch must be 2-D")
        if not np.isin(self.data, (0, 1)).all():
            raise ValueError("sketch values must be 0 or 1")
        self.data = self.data.astype(np.uint8)


@dataclass
class ColorMap:
    """RGB stroke map in [-1, 1], strictly zero outside its support."""

    data: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.support = np.asarray(self.support).astype(np.uint8)
        if self.data.ndim != 3 or self.data.shape[-1] != 3:
            raise ValueError("color map must be H x W x 3")
        if self.support.shape != self.data.shape[:2]:
            raise ValueError("support must match the color grid")
        off = self.support == 0
        if off.any() and np.abs(self.data[off]).max() > 0:
            raise ValueError("color map must be zero outside its support")


def extract_sketch(image: np.ndarray, edge_backend=None, *,
                   min_area_fraction: float = 0.001,
                   smoothing_size: int = 3) -> SketchMap:
    """Edge-domain map of a [-1, 1] RGB image.

    Equalizes the histogram first (so low-contrast structure still reads as
    strokes), detects edges with the pluggable backend, then smooths the
    curves by morphological closing and erases connected components smaller
    than min_area_fraction of the image area.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError("expected an H x W x 3 image")
    h, w = image.shape[:2]
    if h < 16 or w < 16:
        raise ValueError("image too small for sketch extraction (min 16 x 16)")
    if edge_backend is None:
        edge_backend = GradientEdgeBackend()

    equalized = equalize_histogram(image)
    edges = edge_backend(rgb_to_gray(equalized))
    smoothed = binary_close(edges, size=smoothing_size)
    cleaned = remove_small_components(smoothed, math.ceil(min_area_fraction * h * w))
    return SketchMap(cleaned)


def extract_color_domain(image: np.ndarray, segmenter=None, *,
                         median_passes: int = 1, bilateral_passes: int = 20,
                         spatial_sigma: float = 3.0, range_sigma: float = 0.1,
                         window: int = 7) -> ColorMap:
    """Flat-color map: per-segment median of the blurred image.

    The image is smoothed by a 3x3 median filter and repeated bilateral
    filtering (defaults: one median pass, twenty bilateral passes), the
    segmenter labels the blurred result, and every segment is filled with
    its channelwise lower median. No histogram equalization here; it would
    contaminate the colors.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError("expected an H x W x 3 image")
    if segmenter is None:
        segmenter = KMeansSegmenter()

    blurred = image.astype(np.float64)
    for _ in range(median_passes):
        blurred = median_filter3(blurred)
    if bilateral_passes > 0:
        blurred = bilateral_filter(blurred, spatial_sigma=spatial_sigma,
                                   range_sigma=range_sigma, window=window,
                                   passes=bilateral_passes)

    labels = np.asarray(segmenter(blurred))
    if labels.shape != image.shape[:2]:
        raise ValueError("segmentation label map does not match the image grid")

    out = np.zeros_like(blurred)
    for label in np.unique(labels):
        region = labels == label
        for c in range(3):
            out[region, c] = lower_median(blurred[region, c])
    return ColorMap(out.astype(np.float32), np.ones(labels.shape, dtype=np.uint8))


def apply_color_strokes(domain: ColorMap, strokes: MaskMap) -> ColorMap:
    """Restrict a color domain to a stroke mask (training-time strokes)."""
    support = (domain.support & strokes.data).astype(np.uint8)
    return ColorMap(domain.data * support[..., None], support)


@dataclass
class EditBatch:
    """The 9-channel conditioning stack for one image."""

    incomplete: np.ndarray  # H x W x 3
    sketch: np.ndarray      # H x W x 1
    color: np.ndarray       # H x W x 3
    mask: np.ndarray        # H x W x 1
    noise: np.ndarray       # H x W x 1

    def __post_init__(self):
        shapes = {a.shape[:2] for a in (self.incomplete, self.sketch, self.color,
                                        self.mask, self.noise)}
        if len(shapes) != 1:
            raise ValueError("batch layers must share spatial dimensions")
        if self.incomplete.shape[-1] != 3 or self.color.shape[-1] != 3:
            raise ValueError("incomplete and color layers must have 3 channels")
        for name in ("sketch", "mask", "noise"):
            layer = getattr(self, name)
            if layer.ndim != 3 or layer.shape[-1] != 1:
                raise ValueError(f"{name} layer must be H x W x 1")

    def stacked(self) -> np.ndarray:
        """Channel concatenation in the documented order; H x W x 9."""
        return np.concatenate(
            [self.incomplete, self.sketch, self.color, self.mask, self.noise],
            axis=-1).astype(np.float32)

    @property
    def height(self) -> int:
        return self.incomplete.shape[0]

    @property
    def width(self) -> int:
        return self.incomplete.shape[1]


def assemble_batch(image: np.ndarray, mask: MaskMap, sketch: SketchMap,
                   color: ColorMap, rng: np.random.Generator) -> EditBatch:
    """Build the conditioning stack for one ground-truth image.

    The incomplete layer keeps the image where the mask is 0 and zeros the
    erased region; sketch and color are confined to the erased region; the
    noise layer is per-pixel standard normal, also confined to the mask.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ValueError("expected an H x W x 3 image")
    h, w = image.shape[:2]
    for layer, name in ((mask.data, "mask"), (sketch.data, "sketch"),
                        (color.data[..., 0], "color")):
        if layer.shape != (h, w):
            raise ValueError(f"{name} dimensions do not match the image")

    m = mask.data.astype(np.float32)[..., None]
    noise = rng.standard_normal((h, w, 1)).astype(np.float32) * m
    return EditBatch(
        incomplete=image * (1.0 - m),
        sketch=sketch.data.astype(np.float32)[..., None] * m,
        color=color.data.astype(np.float32) * m,
        mask=m,
        noise=noise,
    )


def write_record(path, batch: EditBatch, ground_truth: np.ndarray) -> None:
    """Serialize one training example.

    Layout: magic "FEB1"; height, width as int32 little-endian; then twelve
    H x W float32 little-endian planes, row-major: incomplete RGB (3),
    sketch (1), color RGB (3), mask (1), noise (1), ground truth RGB (3).
    """
    gt = np.asarray(ground_truth, dtype=np.float32)
    if gt.shape != (batch.height, batch.width, 3):
        raise ValueError("ground truth must match the batch dimensions")
    planes = np.concatenate([batch.stacked(), gt], axis=-1)
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(struct.pack("<ii", batch.height, batch.width))
        fh.write(np.ascontiguousarray(
            planes.transpose(2, 0, 1).astype("<f4")).tobytes())


def read_record(path) -> tuple[EditBatch, np.ndarray]:
    """Inverse of `write_record`, validating magic and length."""
    raw = Path(path).read_bytes()
    if raw[:4] != RECORD_MAGIC:
        raise ValueError(f"bad record magic in {path}")
    h, w = struct.unpack("<ii", raw[4:12])
    expected = 12 + 12 * h * w * 4
    if len(raw) != expected:
        raise ValueError(f"truncated record {path}: {len(raw)} bytes, expected {expected}")
    planes = np.frombuffer(raw, dtype="<f4", offset=12).reshape(12, h, w)
    planes = planes.transpose(1, 2, 0)
    batch = EditBatch(
        incomplete=np.ascontiguousarray(planes[..., 0:3]),
        sketch=np.ascontiguousarray(planes[..., 3:4]),
        color=np.ascontiguousarray(planes[..., 4:7]),
        mask=np.ascontiguousarray(planes[..., 7:8]),
        noise=np.ascontiguousarray(planes[..., 8:9]),
    )
    return batch, np.ascontiguousarray(planes[..., 9:12])


def default_eye_positions(size: tuple[int, int]) -> list[tuple[float, float]]:
    """Canonical eye placement for images without a landmark sidecar."""
    h, w = size
    return [(0.35 * w, 0.4 * h), (0.65 * w, 0.4 * h)]


def load_training_images(directory, size: tuple[int, int]):
    """Load every PNG under `directory`, resized to `size`, as [-1, 1] floats.

    Eye positions come from a `landmarks.json` sidecar ({filename: [[x, y],
    ...]}, coordinates at the stored resolution) and are rescaled; files
    without an entry get `default_eye_positions`. Returns a list of
    (name, image, eye_positions) sorted by name.
    """
    from PIL import Image

    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG images under {directory}")
    sidecar = directory / "landmarks.json"
    landmarks = json.loads(sidecar.read_text()) if sidecar.exists() else {}

    h, w = size
    out = []
    for path in paths:
        with Image.open(path) as im:
            src_w, src_h = im.size
            arr = np.asarray(im.convert("RGB").resize((w, h), Image.BILINEAR))
        image = (arr.astype(np.float32) / 127.5) - 1.0
        if path.name in landmarks:
            eyes = [(x * w / src_w, y * h / src_h) for x, y in landmarks[path.name]]
        else:
            eyes = default_eye_positions((h, w))
        out.append((path.name, image, eyes))
    return out
