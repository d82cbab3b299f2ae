"""Classical image operations backing the sketch/color data pipeline.

Everything here is deterministic and works on float arrays: RGB images in
[-1, 1] (H x W x 3), single-channel maps in [0, 1]. The edge detector and
the segmenter are the pluggable defaults used where a learned model would
sit in a full-scale system.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

__all__ = [
    "rgb_to_gray",
    "equalize_histogram",
    "median_filter3",
    "bilateral_filter",
    "GradientEdgeBackend",
    "KMeansSegmenter",
    "binary_close",
    "remove_small_components",
    "lower_median",
]


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an H x W x 3 image; range preserved."""
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def equalize_histogram(image: np.ndarray, bins: int = 256) -> np.ndarray:
    """Per-channel histogram equalization of a [-1, 1] image."""
    out = np.empty_like(image, dtype=np.float64)
    flat_shape = image.shape[:2]
    channels = image.reshape(*flat_shape, -1)
    for c in range(channels.shape[-1]):
        chan = np.clip((channels[..., c] + 1.0) / 2.0, 0.0, 1.0)
        hist, edges = np.histogram(chan, bins=bins, range=(0.0, 1.0))
        cdf = hist.cumsum().astype(np.float64)
        if cdf[-1] == 0:
            out.reshape(*flat_shape, -1)[..., c] = channels[..., c]
            continue
        cdf /= cdf[-1]
        idx = np.clip((chan * bins).astype(np.int64), 0, bins - 1)
        out.reshape(*flat_shape, -1)[..., c] = cdf[idx] * 2.0 - 1.0
    return out.reshape(image.shape)


def median_filter3(image: np.ndarray) -> np.ndarray:
    """3x3 median filter, applied per channel with reflected borders."""
    if image.ndim == 2:
        return ndimage.median_filter(image, size=3, mode="reflect")
    return np.stack(
        [ndimage.median_filter(image[..., c], size=3, mode="reflect")
         for c in range(image.shape[-1])], axis=-1)


def bilateral_filter(image: np.ndarray, spatial_sigma: float = 3.0,
                     range_sigma: float = 0.1, window: int = 7,
                     passes: int = 1) -> np.ndarray:
    """Edge-preserving smoothing on a [-1, 1] image.

    Each pass replaces every pixel with a weighted mean over a window x
    window neighborhood; weights combine a spatial Gaussian with a Gaussian
    on the luma difference so strong edges are kept. Borders reflect.
    """
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be odd and positive")
    half = window // 2
    offsets = [(dy, dx) for dy in range(-half, half + 1) for dx in range(-half, half + 1)]
    spatial_w = np.array(
        [np.exp(-(dy * dy + dx * dx) / (2.0 * spatial_sigma ** 2)) for dy, dx in offsets])

    out = image.astype(np.float64)
    squeeze = out.ndim == 2
    if squeeze:
        out = out[..., None]
    for _ in range(passes):
        guide = rgb_to_gray(out) if out.shape[-1] == 3 else out[..., 0]
        padded = np.pad(out, ((half, half), (half, half), (0, 0)), mode="reflect")
        padded_guide = np.pad(guide, half, mode="reflect")
        h, w, c = out.shape
        acc = np.zeros_like(out)
        norm = np.zeros((h, w))
        for (dy, dx), sw in zip(offsets, spatial_w):
            shifted = padded[half + dy:half + dy + h, half + dx:half + dx + w]
            shifted_guide = padded_guide[half + dy:half + dy + h, half + dx:half + dx + w]
            rw = np.exp(-((shifted_guide - guide) ** 2) / (2.0 * range_sigma ** 2))
            wgt = sw * rw
            acc += shifted * wgt[..., None]
            norm += wgt
        out = acc / norm[..., None]
    return out[..., 0] if squeeze else out


def _sobel(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    kx = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
    gx = ndimage.convolve(gray, kx, mode="reflect")
    gy = ndimage.convolve(gray, kx.T, mode="reflect")
    return gx, gy


class GradientEdgeBackend:
    """Deterministic edge detector: Gaussian smooth, Sobel gradient,
    orientation-quantized non-maximum suppression, then hysteresis linking.

    Thresholds are relative to the peak gradient magnitude so the detector
    adapts to contrast; a constant image yields no edges. A learned edge
    model can replace this class behind the same __call__ contract
    (grayscale in, binary map out).
    """

    def __init__(self, smooth_sigma: float = 1.0, high_fraction: float = 0.2,
                 low_fraction: float = 0.1):
        if not (0.0 < low_fraction <= high_fraction <= 1.0):
            raise ValueError("need 0 < low_fraction <= high_fraction <= 1")
        self.smooth_sigma = smooth_sigma
        self.high_fraction = high_fraction
        self.low_fraction = low_fraction

    def __call__(self, gray: np.ndarray) -> np.ndarray:
        if gray.ndim != 2:
            raise ValueError("edge backend expects a single-channel image")
        smoothed = ndimage.gaussian_filter(gray.astype(np.float64), self.smooth_sigma,
                                           mode="reflect")
        gx, gy = _sobel(smoothed)
        mag = np.hypot(gx, gy)
        peak = mag.max()
        if peak < 1e-9:
            return np.zeros_like(gray, dtype=np.uint8)

        nms = self._suppress(mag, gx, gy)
        high = peak * self.high_fraction
        low = peak * self.low_fraction
        strong = nms >= high
        weak = nms >= low
        labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
        if n == 0:
            return np.zeros_like(gray, dtype=np.uint8)
        keep = np.zeros(n + 1, dtype=bool)
        keep[np.unique(labels[strong])] = True
        keep[0] = False
        return keep[labels].astype(np.uint8)

    @staticmethod
    def _suppress(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
        """Zero out pixels not maximal along their gradient direction.
        Ties are kept so clean two-pixel-wide step responses survive."""
        angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
        padded = np.pad(mag, 1, mode="constant")

        def shifted(dy, dx):
            return padded[1 + dy:1 + dy + mag.shape[0], 1 + dx:1 + dx + mag.shape[1]]

        sectors = [
            ((angle <= 22.5) | (angle > 157.5), (0, 1), (0, -1)),
            ((angle > 22.5) & (angle <= 67.5), (1, 1), (-1, -1)),
            ((angle > 67.5) & (angle <= 112.5), (1, 0), (-1, 0)),
            ((angle > 112.5) & (angle <= 157.5), (1, -1), (-1, 1)),
        ]
        keep = np.zeros(mag.shape, dtype=bool)
        for sel, fwd, back in sectors:
            keep |= sel & (mag >= shifted(*fwd)) & (mag >= shifted(*back))
        return np.where(keep, mag, 0.0)


def binary_close(mask: np.ndarray, size: int = 3) -> np.ndarray:
    """Morphological closing with a size x size square element."""
    structure = np.ones((size, size), dtype=bool)
    return ndimage.binary_closing(mask.astype(bool), structure=structure).astype(np.uint8)


def remove_small_components(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 8-connected components smaller than min_area pixels."""
    labels, n = ndimage.label(mask.astype(bool), structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros_like(mask, dtype=np.uint8)
    counts = np.bincount(labels.ravel())
    keep = counts >= min_area
    keep[0] = False
    return keep[labels].astype(np.uint8)


def lower_median(values: np.ndarray) -> float:
    """Median that resolves even counts to the lower of the two middle
    values; deterministic and exact on integer-valued data."""
    flat = np.sort(np.asarray(values).ravel())
    if flat.size == 0:
        raise ValueError("median of empty set")
    return float(flat[(flat.size - 1) // 2])


class KMeansSegmenter:
    """Fixed-seed color clustering used as the default region segmenter.

    Runs plain Lloyd iterations on pixel colors with k-means++ style
    seeding from a deterministic rng. Label maps are H x W int arrays;
    labels are re-indexed by cluster luma so output is reproducible.
    """

    def __init__(self, k: int = 8, seed: int = 0, iterations: int = 25):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.seed = seed
        self.iterations = iterations

    def __call__(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        pixels = image.reshape(h * w, -1).astype(np.float64)
        uniq = np.unique(pixels, axis=0)
        k = min(self.k, len(uniq))
        rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(9,)))

        centers = [uniq[int(rng.random() * len(uniq))]]
        for _ in range(1, k):
            d2 = np.min(
                ((uniq[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            if total <= 0:
                break
            target = rng.random() * total
            centers.append(uniq[int(np.searchsorted(np.cumsum(d2), target))])
        centers = np.asarray(centers, dtype=np.float64)

        for _ in range(self.iterations):
            d2 = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            assign = d2.argmin(axis=1)
            moved = 0.0
            for j in range(len(centers)):
                member = pixels[assign == j]
                if len(member):
                    new = member.mean(axis=0)
                    moved += float(((new - centers[j]) ** 2).sum())
                    centers[j] = new
            if moved < 1e-12:
                break

        d2 = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        assign = d2.argmin(axis=1)
        order = np.argsort(centers.mean(axis=1), kind="stable")
        remap = np.empty(len(centers), dtype=np.int64)
        remap[order] = np.arange(len(centers))
        return remap[assign].reshape(h, w)
