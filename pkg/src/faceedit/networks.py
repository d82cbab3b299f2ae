"""Generator, discriminator and compositing.

The generator is a U-net of gated convolutions: every block computes a
feature path and a sigmoid gate from the same input and multiplies them,
which lets the network learn where the erased region is. Feature paths are
normalized per pixel across channels (root-mean-square), gates never are.
The discriminator is a stack of spectrally-normalized strided convolutions
emitting a map of patch scores with no squashing on the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

__all__ = [
    "GeneratorConfig",
    "DiscriminatorConfig",
    "ModelParams",
    "pixel_norm",
    "GatedConv2d",
    "GatedDeconv2d",
    "SpectralState",
    "spectral_normalize",
    "SpectralConv2d",
    "Generator",
    "Discriminator",
    "compose",
    "batch_to_tensor",
    "init_parameters",
]

PIXEL_NORM_EPS = 1e-8


def pixel_norm(x: torch.Tensor) -> torch.Tensor:
    """Normalize each pixel's feature vector to unit RMS over channels."""
    return x * torch.rsqrt(x.pow(2).mean(dim=1, keepdim=True) + PIXEL_NORM_EPS)


class GatedConv2d(nn.Module):
    """Convolution gated by a learned sigmoid mask from the same input.

    Output = act(norm(conv_feature(x))) * sigmoid(conv_gate(x)). The
    normalization applies to the feature path only. `activation` is
    'leaky', 'tanh' or 'none'.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, dilation: int = 1, norm: bool = True,
                 activation: str = "leaky", leaky_slope: float = 0.2):
        super().__init__()
        if dilation < 1:
            raise ValueError("dilation must be >= 1")
        padding = dilation * (kernel_size - 1) // 2
        self.feature = nn.Conv2d(in_channels, out_channels, kernel_size,
                                 stride=stride, padding=padding, dilation=dilation)
        self.gate = nn.Conv2d(in_channels, out_channels, kernel_size,
                              stride=stride, padding=padding, dilation=dilation)
        self.norm = norm
        self.activation = activation
        self.leaky_slope = leaky_slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.feature(x)
        if self.norm:
            feat = pixel_norm(feat)
        if self.activation == "leaky":
            feat = F.leaky_relu(feat, self.leaky_slope)
        elif self.activation == "tanh":
            feat = torch.tanh(feat)
        return feat * torch.sigmoid(self.gate(x))


class GatedDeconv2d(nn.Module):
    """Stride-2 transposed convolution with the same gating scheme.

    4x4 kernels avoid uneven kernel overlap when upsampling.
    """

    def __init__(self, in_channels: int, out_channels: int, norm: bool = True,
                 leaky_slope: float = 0.2):
        super().__init__()
        self.feature = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.gate = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.norm = norm
        self.leaky_slope = leaky_slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feat = self.feature(x)
        if self.norm:
            feat = pixel_norm(feat)
        feat = F.leaky_relu(feat, self.leaky_slope)
        return feat * torch.sigmoid(self.gate(x))


@dataclass
class SpectralState:
    """Power-iteration vectors and the current top-singular-value estimate."""

    u: torch.Tensor
    v: torch.Tensor
    sigma: float = 0.0
    degenerate: bool = False


def spectral_normalize(weight, state: SpectralState | None = None,
                       iterations: int = 1):
    """Divide a weight by its estimated top singular value.

    The weight is flattened to (rows, cols) = (out, rest); `iterations`
    rounds of power iteration refine the stored left/right vectors and the
    Rayleigh quotient u^T W v estimates sigma. A zero weight is returned
    unchanged with the state flagged degenerate.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    was_numpy = isinstance(weight, np.ndarray)
    w = torch.as_tensor(weight, dtype=torch.float64 if was_numpy else None)
    mat = w.reshape(w.shape[0], -1)
    rows, cols = mat.shape

    if float(mat.abs().max()) == 0.0:
        state = state or SpectralState(mat.new_ones(rows) / math.sqrt(rows),
                                       mat.new_ones(cols) / math.sqrt(cols))
        state.sigma = 0.0
        state.degenerate = True
        return (weight if was_numpy else w), state

    if state is None:
        u = F.normalize(mat.new_ones(rows), dim=0)
        v = F.normalize(mat.new_ones(cols), dim=0)
    else:
        u, v = state.u.to(mat), state.v.to(mat)
    with torch.no_grad():
        for _ in range(iterations):
            v = F.normalize(mat.detach().t() @ u, dim=0)
            u = F.normalize(mat.detach() @ v, dim=0)
    sigma = u @ mat @ v
    normalized = w / sigma
    new_state = SpectralState(u, v, float(sigma), degenerate=False)
    return (normalized.numpy() if was_numpy else normalized), new_state


class SpectralConv2d(nn.Module):
    """Conv layer whose weight is spectrally normalized at every forward.

    The power-iteration vectors live in buffers; training-mode forwards
    advance them exactly once, eval-mode forwards reuse them frozen.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, padding: int = 1, init_iterations: int = 15):
        super().__init__()
        self.weight_raw = nn.Parameter(
            torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.stride = stride
        self.padding = padding
        nn.init.kaiming_normal_(self.weight_raw)
        rows = out_channels
        cols = in_channels * kernel_size * kernel_size
        self.register_buffer("u", F.normalize(torch.ones(rows), dim=0))
        self.register_buffer("v", F.normalize(torch.ones(cols), dim=0))
        self._init_iterations = init_iterations
        self._warm_start()

    def _warm_start(self):
        """Re-derive u/v from the current weight, starting from the fixed
        ones vector so the state is a pure function of the weight."""
        with torch.no_grad():
            mat = self.weight_raw.reshape(self.weight_raw.shape[0], -1)
            u = F.normalize(torch.ones_like(self.u), dim=0)
            v = F.normalize(torch.ones_like(self.v), dim=0)
            for _ in range(self._init_iterations):
                v = F.normalize(mat.t() @ u, dim=0)
                u = F.normalize(mat @ v, dim=0)
            self.u.copy_(u)
            self.v.copy_(v)

    def normalized_weight(self) -> torch.Tensor:
        mat = self.weight_raw.reshape(self.weight_raw.shape[0], -1)
        if self.training:
            with torch.no_grad():
                self.v.copy_(F.normalize(mat.t() @ self.u, dim=0))
                self.u.copy_(F.normalize(mat @ self.v, dim=0))
        # Snapshots keep later buffer updates out of this forward's graph.
        sigma = self.u.clone() @ mat @ self.v.clone()
        return self.weight_raw / sigma

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.normalized_weight(), self.bias,
                        stride=self.stride, padding=self.padding)


def _channel_widths(base: int, cap: int, depth: int) -> list[int]:
    return [min(base * (2 ** k), cap) for k in range(depth)]


@dataclass
class GeneratorConfig:
    """Scale knobs for the gated U-net.

    depth is the number of stride-2 downsamples; dilationRates sizes the
    bottleneck. Conv layers total 2 * depth + len(dilationRates).
    """

    inputChannels: int = 9
    outputChannels: int = 3
    baseWidth: int = 64
    widthCap: int = 512
    depth: int = 7
    dilationRates: tuple[int, ...] = (2, 4)
    leakySlope: float = 0.2

    @property
    def conv_layer_count(self) -> int:
        return 2 * self.depth + len(self.dilationRates)

    def validate(self, size: tuple[int, int] | None = None) -> None:
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if any(r < 1 for r in self.dilationRates):
            raise ValueError("dilation rates must be >= 1")
        if size is not None:
            h, w = size
            if h % (2 ** self.depth) or w % (2 ** self.depth):
                raise ValueError(
                    f"image size {h}x{w} not divisible by 2^depth = {2 ** self.depth}")

    @classmethod
    def full_scale(cls) -> "GeneratorConfig":
        return cls(baseWidth=64, widthCap=512, depth=7)

    @classmethod
    def toy(cls) -> "GeneratorConfig":
        return cls(baseWidth=16, widthCap=64, depth=4)


@dataclass
class DiscriminatorConfig:
    """Patch-score network: stride-2 spectrally-normalized 3x3 convs."""

    imageChannels: int = 3
    conditionChannels: int = 5  # sketch 1 + color 3 + mask 1
    baseWidth: int = 64
    widthCap: int = 256
    layers: int = 6
    leakySlope: float = 0.2

    @property
    def inputChannels(self) -> int:
        return self.imageChannels + self.conditionChannels

    @classmethod
    def full_scale(cls) -> "DiscriminatorConfig":
        return cls(baseWidth=64, widthCap=256, layers=6)

    @classmethod
    def toy(cls) -> "DiscriminatorConfig":
        return cls(baseWidth=16, widthCap=64, layers=4)


class Generator(nn.Module):
    """Gated-convolution U-net mapping the 9-channel edit stack to RGB.

    Encoder: `depth` stride-2 gated convs (no pixel norm on the first,
    which sees raw input). Bottleneck: gated convs at the listed dilation
    rates. Decoder: gated transposed convs, each consuming the skip
    concatenation with the same-resolution encoder output; the last block
    is a plain transposed conv with a tanh, so outputs lie in (-1, 1).
    """

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        self.config = config or GeneratorConfig()
        self.config.validate()
        cfg = self.config
        widths = _channel_widths(cfg.baseWidth, cfg.widthCap, cfg.depth)

        self.encoder = nn.ModuleList()
        in_ch = cfg.inputChannels
        for k, out_ch in enumerate(widths):
            self.encoder.append(GatedConv2d(in_ch, out_ch, stride=2, norm=(k > 0),
                                            leaky_slope=cfg.leakySlope))
            in_ch = out_ch

        self.bottleneck = nn.ModuleList(
            GatedConv2d(widths[-1], widths[-1], dilation=r, leaky_slope=cfg.leakySlope)
            for r in cfg.dilationRates)

        self.decoder = nn.ModuleList()
        for k in range(cfg.depth - 1, 0, -1):
            self.decoder.append(GatedDeconv2d(2 * widths[k], widths[k - 1],
                                              leaky_slope=cfg.leakySlope))
        self.output = nn.ConvTranspose2d(2 * widths[0], cfg.outputChannels, 4,
                                         stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.inputChannels:
            raise ValueError(
                f"expected N x {self.config.inputChannels} x H x W input, got {tuple(x.shape)}")
        self.config.validate((x.shape[2], x.shape[3]))

        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
        for block in self.bottleneck:
            x = block(x)
        for block, skip in zip(self.decoder, reversed(skips)):
            x = block(torch.cat([x, skip], dim=1))
        x = self.output(torch.cat([x, skips[0]], dim=1))
        return torch.tanh(x)


class Discriminator(nn.Module):
    """SN patch critic over (image, sketch, color, mask) stacks.

    All layers are stride-2 3x3 spectrally-normalized convolutions with a
    leaky ReLU; the final layer emits a single-channel score map with no
    activation.
    """

    def __init__(self, config: DiscriminatorConfig | None = None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        cfg = self.config
        widths = _channel_widths(cfg.baseWidth, cfg.widthCap, cfg.layers - 1)
        self.blocks = nn.ModuleList()
        in_ch = cfg.inputChannels
        for out_ch in widths:
            self.blocks.append(SpectralConv2d(in_ch, out_ch, stride=2))
            in_ch = out_ch
        self.score = SpectralConv2d(in_ch, 1, stride=2)

    def forward(self, image: torch.Tensor, conditioning: torch.Tensor) -> torch.Tensor:
        if image.shape[0] != conditioning.shape[0] or image.shape[2:] != conditioning.shape[2:]:
            raise ValueError("conditioning dimensions do not match the image")
        if conditioning.shape[1] != self.config.conditionChannels:
            raise ValueError(
                f"expected {self.config.conditionChannels} conditioning channels, "
                f"got {conditioning.shape[1]}")
        x = torch.cat([image, conditioning], dim=1)
        for block in self.blocks:
            x = F.leaky_relu(block(x), self.config.leakySlope)
        return self.score(x)


@dataclass
class ModelParams:
    """Generator/discriminator pair plus their configs, as one unit."""

    generator: Generator
    discriminator: Discriminator

    @classmethod
    def create(cls, gen_config: GeneratorConfig, disc_config: DiscriminatorConfig,
               seed: int = 0) -> "ModelParams":
        gen = Generator(gen_config)
        disc = Discriminator(disc_config)
        init_parameters(gen, seed)
        init_parameters(disc, seed + 1)
        for m in disc.modules():
            if isinstance(m, SpectralConv2d):
                m._warm_start()
        return cls(gen, disc)


def compose(gen: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Composite: generator pixels inside the mask, ground truth outside.

    mask is 1 on the erased region. Outside the mask the result is the
    ground truth bit-exactly, and no gradient reaches `gen` there.
    """
    if gen.shape != gt.shape:
        raise ValueError("generated and ground-truth shapes differ")
    if mask.shape[-2:] != gen.shape[-2:]:
        raise ValueError("mask spatial dimensions differ from the images")
    return mask * gen + (1.0 - mask) * gt


def batch_to_tensor(stacked: np.ndarray) -> torch.Tensor:
    """H x W x C float array -> 1 x C x H x W float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(
        stacked.transpose(2, 0, 1)[None])).float()


def init_parameters(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled normal init of all weights, zero biases, from one seed.

    Uses a numpy stream so the same seed reproduces bit-identical
    parameters regardless of torch's global RNG state.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(17,)))
    for name, param in module.named_parameters():
        with torch.no_grad():
            if param.ndim >= 2:
                fan_in = int(np.prod(param.shape[1:]))
                std = math.sqrt(2.0 / fan_in)
                values = rng.standard_normal(tuple(param.shape)) * std
                param.copy_(torch.from_numpy(values).to(param.dtype))
            else:
                param.zero_()
