"""Procedural portrait-like fixture images for tests and demos.

Each fixture is a smooth background with an elliptical "face", two dark
"eyes", a mouth bar and a hair blob, all colored from a seeded rng. The
structure is enough for the edge and segmentation pipelines to produce
non-trivial sketch and color domains.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .pngio import save_image

__all__ = ["make_fixture_image", "write_fixture_dataset"]


def make_fixture_image(size: int, seed: int):
    """Returns (image in [-1,1] H x W x 3, eye positions [(x, y), (x, y)])."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
    h = w = size
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    bg_a = rng.uniform(-0.9, 0.1, size=3)
    bg_b = rng.uniform(-0.1, 0.9, size=3)
    t = (xs / (w - 1) + ys / (h - 1))[..., None] / 2.0
    img = bg_a * (1 - t) + bg_b * t

    cx, cy = w * 0.5 + rng.uniform(-0.05, 0.05) * w, h * 0.55
    rx, ry = w * 0.30, h * 0.36
    face = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
    skin = np.array([0.65, 0.25, 0.05]) + rng.uniform(-0.15, 0.15, size=3)
    shade = 1.0 - 0.25 * ((ys - cy) / ry).clip(-1, 1)[..., None] ** 2
    img[face] = (skin * shade[face]).clip(-1, 1)

    hair_cy = h * 0.22
    hair = ((xs - cx) / (w * 0.34)) ** 2 + ((ys - hair_cy) / (h * 0.18)) ** 2 <= 1.0
    hair_color = rng.uniform(-0.95, -0.2, size=3)
    img[hair] = hair_color

    eyes = []
    for side in (-1.0, 1.0):
        ex = cx + side * w * 0.12 + rng.uniform(-1.5, 1.5)
        ey = cy - h * 0.12 + rng.uniform(-1.5, 1.5)
        disc = (xs - ex) ** 2 + (ys - ey) ** 2 <= (max(2.0, 0.035 * w)) ** 2
        img[disc] = [-0.9, -0.9, -0.85]
        eyes.append((float(ex), float(ey)))

    mouth = (np.abs(xs - cx) <= w * 0.10) & (np.abs(ys - (cy + h * 0.16)) <= max(1.0, h * 0.02))
    img[mouth] = [0.6, -0.5, -0.4]

    return np.clip(img, -1.0, 1.0).astype(np.float32), eyes


def write_fixture_dataset(directory, count: int = 8, size: int = 64,
                          seed: int = 0) -> Path:
    """Write `count` fixture PNGs plus the landmarks.json sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    landmarks = {}
    for i in range(count):
        image, eyes = make_fixture_image(size, seed * 1000 + i)
        name = f"fixture_{i:03d}.png"
        save_image(directory / name, image)
        landmarks[name] = [[x, y] for x, y in eyes]
    (directory / "landmarks.json").write_text(json.dumps(landmarks, indent=1))
    return directory
