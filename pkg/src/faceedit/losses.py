"""Training objectives: reconstruction, perceptual/style, TV, adversarial.

All functions take NCHW tensors and reduce to scalars. Masks follow the
artifact-wide polarity: M = 1 on the erased region. The generator total is

    L_G = L_pixel + sigma * L_percept + beta * L_adv
          + gamma * (L_style(gen) + L_style(comp)) + upsilon * L_tv
          + epsilon * E[D(gt)^2]

and the discriminator trains on E[1 - D(gt)] + E[1 + D(comp)] + theta * L_gp
with no hinge clipping on either side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "LossWeights",
    "FeatureExtractionError",
    "IdentityFeatureExtractor",
    "RandomFeaturePyramid",
    "load_vgg16_extractor",
    "per_pixel_loss",
    "perceptual_loss",
    "perceptual_from_features",
    "gram_matrix",
    "style_loss",
    "style_from_features",
    "tv_loss",
    "gan_generator_loss",
    "discriminator_loss",
    "gradient_penalty",
    "real_score_regularizer",
    "GeneratorLossComponents",
    "total_generator_loss",
]


@dataclass
class LossWeights:
    """Scalar coefficients of the composite objective.

    sigma: perceptual; beta: adversarial (generator side); gamma: style;
    upsilon: total variation; epsilon: the E[D(gt)^2] regularizer; theta:
    gradient penalty; alpha: extra weight on the erased region's pixel
    loss, required > 1.
    """

    sigma: float = 0.05
    beta: float = 0.001
    gamma: float = 120.0
    upsilon: float = 0.1
    epsilon: float = 0.001
    theta: float = 10.0
    alpha: float = 6.0

    def validate(self) -> None:
        for name in ("sigma", "beta", "gamma", "upsilon", "epsilon", "theta", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1 (erased region weighs more)")


class FeatureExtractionError(RuntimeError):
    """Raised when a pluggable feature extractor fails on an input."""


class IdentityFeatureExtractor:
    """Single 'layer' returning the image itself; handy for exact tests."""

    def __call__(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [x]


class RandomFeaturePyramid(nn.Module):
    """Frozen three-stage conv/pool pyramid with fixed-seed random filters.

    Stands in for a pretrained perceptual backbone at desk scale: it is
    deterministic, non-trainable, and exposes one feature map per pooling
    stage, so every property of the perceptual and style losses holds
    without a large external weights file.
    """

    def __init__(self, in_channels: int = 3, widths: tuple[int, ...] = (16, 32, 64),
                 seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
        stages = []
        prev = in_channels
        for width in widths:
            conv = nn.Conv2d(prev, width, 3, padding=1)
            with torch.no_grad():
                fan_in = prev * 9
                conv.weight.copy_(torch.from_numpy(
                    rng.standard_normal(tuple(conv.weight.shape)) / np.sqrt(fan_in)).float())
                conv.bias.zero_()
            stages.append(conv)
            prev = width
        self.stages = nn.ModuleList(stages)
        for p in self.parameters():
            p.requires_grad_(False)

    def __call__(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        for conv in self.stages:
            x = F.avg_pool2d(F.relu(conv(x)), 2)
            feats.append(x)
        return feats

    # nn.Module.__call__ is bypassed on purpose: the extractor contract is
    # a plain callable returning the feature list.
    forward = __call__


def load_vgg16_extractor(weights_path) -> nn.Module:
    """Build the first three conv/pool stages of a standard 16-layer VGG
    and load pretrained weights from a local state-dict file.

    Accepts state dicts keyed like 'features.N.weight'. Inputs in [-1, 1]
    are remapped to the ImageNet-normalized domain internally. The
    extractor is frozen.
    """
    cfg = [(3, 64), (64, 64), "pool", (64, 128), (128, 128), "pool",
           (128, 256), (256, 256), (256, 256), "pool"]
    layers, index_map, idx = [], {}, 0
    for item in cfg:
        if item == "pool":
            layers.append(nn.MaxPool2d(2))
            idx += 1
        else:
            conv = nn.Conv2d(item[0], item[1], 3, padding=1)
            index_map[len(layers)] = idx
            layers.append(conv)
            layers.append(nn.ReLU(inplace=False))
            idx += 2

    class _Vgg16Pyramid(nn.Module):
        def __init__(self):
            super().__init__()
            self.features = nn.ModuleList(layers)

        def __call__(self, x):
            mean = x.new_tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
            std = x.new_tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
            x = ((x + 1.0) / 2.0 - mean) / std
            feats = []
            for layer in self.features:
                x = layer(x)
                if isinstance(layer, nn.MaxPool2d):
                    feats.append(x)
            return feats

        forward = __call__

    model = _Vgg16Pyramid()
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    own = {}
    for local_pos, src_idx in index_map.items():
        own[f"features.{local_pos}.weight"] = state[f"features.{src_idx}.weight"]
        own[f"features.{local_pos}.bias"] = state[f"features.{src_idx}.bias"]
    model.load_state_dict(own, strict=False)
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def per_pixel_loss(gen: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor,
                   alpha: float) -> torch.Tensor:
    """Elementwise L1 with the erased region up-weighted by alpha.

    (1/N) * ||(1-M) (gen - gt)||_1 + alpha * (1/N) * ||M (gen - gt)||_1
    with N the element count of gt and M = 1 on the erased region.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if gen.shape != gt.shape:
        raise ValueError("shapes differ")
    n = gt.numel()
    diff = gen - gt
    kept = ((1.0 - mask) * diff).abs().sum() / n
    erased = (mask * diff).abs().sum() / n
    return kept + alpha * erased


def _features(extractor, x: torch.Tensor) -> list[torch.Tensor]:
    try:
        feats = extractor(x)
    except Exception as exc:  # propagate with a distinct type
        raise FeatureExtractionError(f"feature extractor failed: {exc}") from exc
    if not feats:
        raise FeatureExtractionError("feature extractor returned no layers")
    return feats


def perceptual_from_features(feats_gen: list[torch.Tensor],
                             feats_comp: list[torch.Tensor],
                             feats_gt: list[torch.Tensor]) -> torch.Tensor:
    total = feats_gt[0].new_zeros(())
    for fg, fgt in zip(feats_gen, feats_gt):
        total = total + (fg - fgt).abs().sum() / fgt.numel()
    for fc, fgt in zip(feats_comp, feats_gt):
        total = total + (fc - fgt).abs().sum() / fgt.numel()
    return total


def perceptual_loss(gen: torch.Tensor, comp: torch.Tensor, gt: torch.Tensor,
                    extractor) -> torch.Tensor:
    """Feature-space L1 of both the raw output and the composite against
    ground truth, each layer normalized by its own element count."""
    return perceptual_from_features(_features(extractor, gen),
                                    _features(extractor, comp),
                                    _features(extractor, gt))


def gram_matrix(feature: torch.Tensor) -> torch.Tensor:
    """Channel autocorrelation of a feature map.

    N x C x H x W -> N x C x C (or C x H x W -> C x C): positions flatten
    and G = F^T F over them. Spatial arrangement is discarded.
    """
    squeeze = feature.ndim == 3
    if squeeze:
        feature = feature[None]
    n, c = feature.shape[:2]
    flat = feature.reshape(n, c, -1)
    gram = torch.einsum("ncx,ndx->ncd", flat, flat)
    return gram[0] if squeeze else gram


def style_from_features(feats_img: list[torch.Tensor],
                        feats_gt: list[torch.Tensor]) -> torch.Tensor:
    total = feats_gt[0].new_zeros(())
    for fi, fg in zip(feats_img, feats_gt):
        batch = fi.shape[0]
        c = fi.shape[1]
        n_q = fi[0].numel()
        diff = (gram_matrix(fi) - gram_matrix(fg)).abs().sum() / n_q
        total = total + diff / (c * c * batch)
    return total


def style_loss(image: torch.Tensor, gt: torch.Tensor, extractor) -> torch.Tensor:
    """Gram-matrix L1 across extractor layers.

    Per layer: (1 / C^2) * || (G(image) - G(gt)) / N ||_1 with N the
    feature element count, averaged over the batch.
    """
    return style_from_features(_features(extractor, image),
                               _features(extractor, gt))


def tv_loss(comp: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
    """Total variation over the erased region.

    Sums the channel L1 of forward row/column differences at every region
    position whose neighbor exists, scaled by 1 / numel(comp).
    """
    if region.shape[-2:] != comp.shape[-2:]:
        raise ValueError("region mask spatial dimensions differ from the image")
    n = comp.numel() / comp.shape[0] if comp.ndim == 4 else comp.numel()
    if comp.ndim == 3:
        comp = comp[None]
        region = region[None] if region.ndim == 3 else region[None, None]
    if region.ndim == 3:
        region = region[:, None]
    n_total = comp.numel()
    col = ((comp[..., :, 1:] - comp[..., :, :-1]).abs() * region[..., :, :-1]).sum()
    row = ((comp[..., 1:, :] - comp[..., :-1, :]).abs() * region[..., :-1, :]).sum()
    return (col + row) / n_total


def gan_generator_loss(scores: torch.Tensor) -> torch.Tensor:
    """Negative mean of the patch score map of the composite."""
    return -scores.mean()


def discriminator_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor,
                       gp, theta: float) -> torch.Tensor:
    """E[1 - D(gt)] + E[1 + D(comp)] + theta * gradient penalty."""
    return (1.0 - real_scores).mean() + (1.0 + fake_scores).mean() + theta * gp


def real_score_regularizer(real_scores: torch.Tensor) -> torch.Tensor:
    """E[D(gt)^2]; keeps real patch scores from collapsing toward zero."""
    return real_scores.pow(2).mean()


def gradient_penalty(discriminator, comp: torch.Tensor, gt: torch.Tensor,
                     mask: torch.Tensor, rng: np.random.Generator,
                     create_graph: bool = True) -> torch.Tensor:
    """Unit-gradient penalty on the masked input gradient.

    One interpolation coefficient t ~ U(0, 1) per batch element mixes the
    composite and real images; the penalty is E[(|| grad_U D(U) * M ||_2
    - 1)^2], the gradient masked before the norm.
    """
    if comp.shape != gt.shape:
        raise ValueError("shapes differ")
    t = torch.from_numpy(
        rng.random((comp.shape[0], 1, 1, 1))).to(comp.dtype)
    u = (t * comp + (1.0 - t) * gt).detach().requires_grad_(True)
    scores = discriminator(u)
    if not scores.requires_grad:
        raise RuntimeError("discriminator output does not carry input gradients")
    grads = torch.autograd.grad(scores.sum(), u, create_graph=create_graph)[0]
    masked = grads * mask
    norms = masked.reshape(masked.shape[0], -1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


@dataclass
class GeneratorLossComponents:
    """The individual terms feeding the weighted generator total."""

    per_pixel: torch.Tensor | float
    perceptual: torch.Tensor | float
    adversarial: torch.Tensor | float
    style_gen: torch.Tensor | float
    style_comp: torch.Tensor | float
    tv: torch.Tensor | float
    real_score_square: torch.Tensor | float


def total_generator_loss(components: GeneratorLossComponents,
                         weights: LossWeights):
    """Weighted sum of the generator's loss components."""
    c, w = components, weights
    return (c.per_pixel
            + w.sigma * c.perceptual
            + w.beta * c.adversarial
            + w.gamma * (c.style_gen + c.style_comp)
            + w.upsilon * c.tv
            + w.epsilon * c.real_score_square)
