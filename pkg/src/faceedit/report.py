"""Figure rendering for training runs and dataset previews.

Figures land next to the delimited outputs they describe: loss.csv gets
loss_curves.png, evaluation gets a sample panel, the mask sampler gets a
seed grid. All rendering targets files (Agg backend), never a display.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_loss_curves", "render_mask_grid", "render_eval_panel"]


def _read_loss_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"no rows in {path}")
    return {key: np.array([float(r[key]) for r in rows]) for key in rows[0]}


def render_loss_curves(csv_path, out_dir) -> Path:
    """Two-panel figure: generator components and adversarial terms."""
    data = _read_loss_csv(csv_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps = data["step"]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
    for key in ("total", "per_pixel", "percept", "style", "tv"):
        ax1.plot(steps, data[key], label=key, linewidth=1.0)
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.set_ylabel("generator loss")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)

    for key in ("d_loss", "gp", "g_sn"):
        ax2.plot(steps, data[key], label=key, linewidth=1.0)
    ax2.set_xlabel("step")
    ax2.set_ylabel("adversarial terms")
    ax2.legend(fontsize=8)
    ax2.grid(alpha=0.3)

    fig.tight_layout()
    out_path = out_dir / "loss_curves.png"
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_mask_grid(masks, out_path, columns: int = 4) -> Path:
    """Grid of binary masks; `masks` is a list of (title, H x W array)."""
    rows = (len(masks) + columns - 1) // columns
    fig, axes = plt.subplots(rows, columns, figsize=(2.2 * columns, 2.2 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes:
        ax.axis("off")
    for ax, (title, mask) in zip(axes, masks):
        ax.imshow(mask, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title, fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_eval_panel(panels, out_path) -> Path:
    """Rows of (ground truth, masked input, composite) [-1, 1] images."""
    rows = len(panels)
    fig, axes = plt.subplots(rows, 3, figsize=(7.5, 2.5 * rows), squeeze=False)
    titles = ("ground truth", "masked input", "composite")
    for r, triple in enumerate(panels):
        for c, img in enumerate(triple):
            ax = axes[r][c]
            ax.imshow(np.clip((img + 1.0) / 2.0, 0, 1))
            ax.axis("off")
            if r == 0:
                ax.set_title(titles[c], fontsize=9)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
