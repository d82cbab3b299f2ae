"""Free-form mask synthesis from random polyline strokes.

Masks are binary H x W grids where 1 marks the erased (editable) region.
Training masks are built from chains of thick line segments with randomly
perturbed headings, plus strokes anchored at eye positions so the erased
region exercises the hardest part of a face, and an optional union with a
hair-region mask.

Randomness layout
-----------------
All sampling is derived from a single integer seed through named
substreams, so the mask for (seed, draw index) never depends on how many
draws a particular configuration requests:

* substream (0,): one uniform u, stroke-chain count = floor(u * maxDraw)
* substream (1, i): every sample used by outer draw i (start point, heading,
  vertex count, per-vertex perturbation/length, then the eye strokes)
* substream (2,): one uniform for the hair-mask union decision

Integer draws use floor(u * n) on a unit uniform, which makes the chain
count monotone in maxDraw under a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MaskMap",
    "MaskGenParams",
    "Landmarks",
    "rasterize_stroke",
    "generate_free_form_mask",
]


@dataclass
class MaskMap:
    """Binary erase mask: 1 = erased/editable, 0 = kept."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")
        if not np.isin(self.data, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        self.data = self.data.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "MaskMap":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def union(self, other: "MaskMap") -> "MaskMap":
        if other.data.shape != self.data.shape:
            raise ValueError("mask shapes differ")
        return MaskMap(self.data | other.data)


@dataclass
class MaskGenParams:
    """Hyperparameters of the stroke-chain mask sampler.

    maxDraw bounds the number of stroke chains, maxLine the segments per
    chain, maxAngle (degrees) the per-vertex heading perturbation and
    maxLength (pixels) each segment's length.
    """

    maxDraw: int = 6
    maxLine: int = 6
    maxAngle: float = 60.0
    maxLength: int = 16
    strokeThickness: int = 3
    hairMaskProbability: float = 0.0
    eyeLineCount: int = 1

    def validate(self, size: tuple[int, int] | None = None) -> None:
        if self.maxDraw < 1 or self.maxLine < 1 or self.maxLength < 1:
            raise ValueError("maxDraw, maxLine and maxLength must be positive")
        if not (0.0 < self.maxAngle <= 180.0):
            raise ValueError("maxAngle must be in (0, 180] degrees")
        if self.strokeThickness < 1:
            raise ValueError("strokeThickness must be >= 1")
        if not (0.0 <= self.hairMaskProbability <= 1.0):
            raise ValueError("hairMaskProbability must be in [0, 1]")
        if self.eyeLineCount < 0:
            raise ValueError("eyeLineCount must be non-negative")
        if size is not None and self.maxLength >= min(size):
            raise ValueError("maxLength must be smaller than min(H, W)")

    @classmethod
    def defaults_for(cls, size: tuple[int, int]) -> "MaskGenParams":
        """Scale-aware defaults: thickness 5% of the short side (min 3 px),
        segment length a quarter of it."""
        short = min(size)
        return cls(
            maxDraw=6,
            maxLine=6,
            maxAngle=60.0,
            maxLength=max(4, short // 4),
            strokeThickness=max(3, round(0.05 * short)),
            hairMaskProbability=0.0,
            eyeLineCount=1,
        )


@dataclass
class Landmarks:
    """Eye pixel positions (x, y) and an optional hair-region mask."""

    eyePositions: list[tuple[float, float]] = field(default_factory=list)
    hairMask: MaskMap | None = None

    def validate(self, size: tuple[int, int]) -> None:
        h, w = size
        for (x, y) in self.eyePositions:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"eye position ({x}, {y}) outside {h}x{w} image")
        if self.hairMask is not None and self.hairMask.data.shape != (h, w):
            raise ValueError("hairMask dimensions do not match image size")


def _draw_capsule(arr: np.ndarray, x0: float, y0: float, x1: float, y1: float,
                  thickness: float) -> None:
    """Set to 1 every pixel whose center lies within thickness/2 of the
    segment (x0,y0)-(x1,y1). In-place; coordinates are x = column, y = row."""
    h, w = arr.shape
    r = thickness / 2.0
    lo_x = max(0, int(math.floor(min(x0, x1) - r)))
    hi_x = min(w - 1, int(math.ceil(max(x0, x1) + r)))
    lo_y = max(0, int(math.floor(min(y0, y1) - r)))
    hi_y = min(h - 1, int(math.ceil(max(y0, y1) + r)))
    if lo_x > hi_x or lo_y > hi_y:
        return
    ys, xs = np.mgrid[lo_y:hi_y + 1, lo_x:hi_x + 1]
    dx, dy = x1 - x0, y1 - y0
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        d2 = (xs - x0) ** 2 + (ys - y0) ** 2
    else:
        t = ((xs - x0) * dx + (ys - y0) * dy) / seg2
        t = np.clip(t, 0.0, 1.0)
        d2 = (xs - (x0 + t * dx)) ** 2 + (ys - (y0 + t * dy)) ** 2
    arr[lo_y:hi_y + 1, lo_x:hi_x + 1] |= (d2 <= r * r + 1e-12).astype(np.uint8)


def rasterize_stroke(mask: MaskMap, start: tuple[float, float], angle: float,
                     length: float, thickness: int) -> MaskMap:
    """Union a thick line segment into a copy of `mask`.

    The segment starts at (x, y) = `start` and ends at
    (x + length*sin(angle), y + length*cos(angle)) with `angle` in degrees
    and the y axis pointing down. A pixel is covered when its center lies
    within thickness/2 of the segment; length 0 degenerates to a disc.
    Out-of-bounds pixels are clipped.
    """
    x0, y0 = float(start[0]), float(start[1])
    if not (math.isfinite(x0) and math.isfinite(y0) and math.isfinite(angle)
            and math.isfinite(length)):
        raise ValueError("stroke coordinates must be finite")
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    if length < 0:
        raise ValueError("length must be >= 0")
    if not (0 <= x0 < mask.width and 0 <= y0 < mask.height):
        raise ValueError("stroke start must lie inside the mask bounds")
    rad = math.radians(angle)
    x1 = x0 + length * math.sin(rad)
    y1 = y0 + length * math.cos(rad)
    out = mask.data.copy()
    _draw_capsule(out, x0, y0, x1, y1, float(thickness))
    return MaskMap(out)


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _as_seed(rng: int | np.random.Generator | np.random.SeedSequence) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.SeedSequence):
        return int(rng.generate_state(1, np.uint64)[0])
    if isinstance(rng, np.random.Generator):
        # Fold the generator's state into one seed; deterministic but advances it.
        return int(rng.integers(0, 2 ** 63))
    raise TypeError(f"unsupported rng source: {type(rng)!r}")


def _randint(rng: np.random.Generator, n: int) -> int:
    """Integer uniform over [0, n) as floor(u * n); monotone in n for fixed u."""
    if n <= 0:
        return 0
    return int(rng.random() * n)


def chain_count(seed: int, params: MaskGenParams) -> int:
    """Number of stroke chains the sampler will draw for this seed."""
    return _randint(_substream(seed, 0), params.maxDraw)


def generate_free_form_mask(rng: int | np.random.Generator | np.random.SeedSequence,
                            size: tuple[int, int],
                            landmarks: Landmarks,
                            params: MaskGenParams) -> MaskMap:
    """Sample a free-form erase mask.

    Draws `chain_count` stroke chains. Each chain starts at a uniform pixel
    with a uniform heading; segment j perturbs the heading by a uniform
    angle in [-maxAngle, maxAngle], flips it by 180 degrees when j is odd,
    and advances the pen by a uniform length in [0, maxLength). After each
    chain, `eyeLineCount` single strokes are drawn from a uniformly chosen
    eye position. Finally the hair mask, when given, is unioned in with
    probability hairMaskProbability.
    """
    h, w = int(size[0]), int(size[1])
    params.validate((h, w))
    landmarks.validate((h, w))
    if params.eyeLineCount > 0 and not landmarks.eyePositions:
        raise ValueError("eyeLineCount > 0 requires at least one eye position")

    seed = _as_seed(rng)
    out = np.zeros((h, w), dtype=np.uint8)
    thickness = float(params.strokeThickness)

    num_line = _randint(_substream(seed, 0), params.maxDraw)
    for i in range(num_line):
        draw_rng = _substream(seed, 1, i)
        x = float(_randint(draw_rng, w))
        y = float(_randint(draw_rng, h))
        start_angle = draw_rng.random() * 360.0
        num_v = _randint(draw_rng, params.maxLine)
        for j in range(num_v):
            angle_p = (draw_rng.random() * 2.0 - 1.0) * params.maxAngle
            angle = start_angle + angle_p + (180.0 if j % 2 else 0.0)
            length = _randint(draw_rng, params.maxLength)
            rad = math.radians(angle)
            nx = x + length * math.sin(rad)
            ny = y + length * math.cos(rad)
            _draw_capsule(out, x, y, nx, ny, thickness)
            # Out-of-bounds vertices are clipped and the chain continues.
            x = min(max(nx, 0.0), w - 1.0)
            y = min(max(ny, 0.0), h - 1.0)
        for _ in range(params.eyeLineCount):
            ex, ey = landmarks.eyePositions[_randint(draw_rng, len(landmarks.eyePositions))]
            angle = draw_rng.random() * 360.0
            length = _randint(draw_rng, params.maxLength)
            rad = math.radians(angle)
            _draw_capsule(out, float(ex), float(ey),
                          ex + length * math.sin(rad), ey + length * math.cos(rad),
                          thickness)

    if landmarks.hairMask is not None and params.hairMaskProbability > 0.0:
        if _substream(seed, 2).random() < params.hairMaskProbability:
            out |= landmarks.hairMask.data

    return MaskMap(out)


def synthetic_hair_mask(size: tuple[int, int], seed: int = 0) -> MaskMap:
    """Deterministic top-of-image blob standing in for a hair segmenter."""
    h, w = size
    rng = _substream(seed, 3)
    cx = w / 2.0 + (rng.random() - 0.5) * w * 0.2
    cy = h * 0.18
    rx, ry = w * 0.30, h * 0.16
    ys, xs = np.mgrid[0:h, 0:w]
    blob = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    return MaskMap(blob.astype(np.uint8))
