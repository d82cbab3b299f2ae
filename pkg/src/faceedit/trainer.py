"""Adversarial training loop, evaluation, and run bookkeeping.

Every source of randomness in a step (batch choice, masks, stroke masks,
noise, interpolation coefficients) is derived from (seed, step) through
named substreams, so a run resumed from any checkpoint continues with the
exact losses of the uninterrupted run. Loss components stream to a CSV row
per step; figures render next to it when the run finishes.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .dataprep import (
    EditBatch,
    apply_color_strokes,
    assemble_batch,
    extract_color_domain,
    extract_sketch,
    load_training_images,
)
from .losses import (
    GeneratorLossComponents,
    LossWeights,
    RandomFeaturePyramid,
    discriminator_loss,
    gan_generator_loss,
    gradient_penalty,
    per_pixel_loss,
    perceptual_from_features,
    perceptual_loss,
    real_score_regularizer,
    style_from_features,
    style_loss,
    total_generator_loss,
    tv_loss,
)
from .maskgen import Landmarks, MaskGenParams, MaskMap, generate_free_form_mask
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    ModelParams,
    batch_to_tensor,
    compose,
)

__all__ = [
    "TrainConfig",
    "TrainingDivergedError",
    "LOSS_CSV_COLUMNS",
    "load_train_config",
    "train_step",
    "train_loop",
    "evaluate",
    "save_training_checkpoint",
    "load_training_checkpoint",
]

LOSS_CSV_COLUMNS = ("step", "per_pixel", "percept", "g_sn", "style", "tv",
                    "d_loss", "gp", "total")


class TrainingDivergedError(RuntimeError):
    """A loss component became non-finite; the message names the first."""


@dataclass
class TrainConfig:
    imageSize: int = 64
    batchSize: int = 8
    steps: int = 200
    gLearningRate: float = 1e-4
    dLearningRate: float = 1e-4
    gMoments: tuple[float, float] = (0.5, 0.9)
    dMoments: tuple[float, float] = (0.5, 0.9)
    dStepsPerGStep: int = 1
    seed: int = 0
    checkpointInterval: int = 100
    datasetPath: str = ""
    runDir: str = ""
    epsilonInDiscriminator: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    maskParams: MaskGenParams | None = None
    generator: GeneratorConfig = field(default_factory=GeneratorConfig.toy)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig.toy)

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batchSize < 1:
            raise ValueError("batchSize must be >= 1")
        self.generator.validate((self.imageSize, self.imageSize))
        self.weights.validate()
        if self.maskParams is not None:
            self.maskParams.validate((self.imageSize, self.imageSize))

    def mask_params(self) -> MaskGenParams:
        return self.maskParams or MaskGenParams.defaults_for(
            (self.imageSize, self.imageSize))

    def to_dict(self) -> dict:
        def conv(val):
            if dataclasses.is_dataclass(val):
                return {f.name: conv(getattr(val, f.name)) for f in dc_fields(val)}
            if isinstance(val, tuple):
                return list(val)
            return val
        return conv(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["weights"] = LossWeights(**data.get("weights", {}))
        mp = data.get("maskParams")
        data["maskParams"] = MaskGenParams(**mp) if mp else None
        gen = dict(data.get("generator", {}))
        gen["dilationRates"] = tuple(gen.get("dilationRates", (2, 4)))
        data["generator"] = GeneratorConfig(**gen)
        data["discriminator"] = DiscriminatorConfig(**data.get("discriminator", {}))
        for key in ("gMoments", "dMoments"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


# Flat key = value config file. Keys mirror the mask sampler's
# hyperparameter names; see README for the full table.
_CONFIG_KEYS = {
    "image_size": ("imageSize", int),
    "batch_size": ("batchSize", int),
    "steps": ("steps", int),
    "g_lr": ("gLearningRate", float),
    "d_lr": ("dLearningRate", float),
    "d_steps_per_g_step": ("dStepsPerGStep", int),
    "seed": ("seed", int),
    "checkpoint_interval": ("checkpointInterval", int),
    "dataset_path": ("datasetPath", str),
    "run_dir": ("runDir", str),
    "epsilon_in_discriminator": ("epsilonInDiscriminator",
                                 lambda v: v.lower() in ("1", "true", "yes", "on")),
}
_WEIGHT_KEYS = ("sigma", "beta", "gamma", "upsilon", "epsilon", "theta", "alpha")
_MASK_KEYS = {"maxDraw": int, "maxLine": int, "maxAngle": float, "maxLength": int,
              "strokeThickness": int, "hairMaskProbability": float, "eyeLineCount": int}
_GEN_KEYS = {"gen_base_width": ("baseWidth", int), "gen_width_cap": ("widthCap", int),
             "gen_depth": ("depth", int)}
_DISC_KEYS = {"disc_base_width": ("baseWidth", int), "disc_width_cap": ("widthCap", int),
              "disc_layers": ("layers", int)}


def parse_flat_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def load_train_config(path) -> TrainConfig:
    """Read a flat key=value training config file."""
    raw = parse_flat_config(Path(path).read_text())
    cfg = TrainConfig()
    mask_overrides = {}
    for key, value in raw.items():
        if key in _CONFIG_KEYS:
            attr, conv = _CONFIG_KEYS[key]
            setattr(cfg, attr, conv(value))
        elif key in ("g_beta1", "g_beta2", "d_beta1", "d_beta2"):
            attr = "gMoments" if key.startswith("g") else "dMoments"
            pair = list(getattr(cfg, attr))
            pair[0 if key.endswith("1") else 1] = float(value)
            setattr(cfg, attr, tuple(pair))
        elif key in _WEIGHT_KEYS:
            setattr(cfg.weights, key, float(value))
        elif key in _MASK_KEYS:
            mask_overrides[key] = _MASK_KEYS[key](value)
        elif key in _GEN_KEYS:
            attr, conv = _GEN_KEYS[key]
            setattr(cfg.generator, attr, conv(value))
        elif key == "gen_dilation_rates":
            cfg.generator.dilationRates = tuple(int(v) for v in value.split(","))
        elif key in _DISC_KEYS:
            attr, conv = _DISC_KEYS[key]
            setattr(cfg.discriminator, attr, conv(value))
        else:
            raise ValueError(f"unknown config key: {key}")
    if mask_overrides:
        params = cfg.mask_params()
        for key, value in mask_overrides.items():
            setattr(params, key, value)
        cfg.maskParams = params
    cfg.validate()
    return cfg


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


@dataclass
class TrainingExample:
    """One source image with its precomputed sketch/color domains."""

    name: str
    image: np.ndarray
    eyes: list[tuple[float, float]]
    sketch_domain: np.ndarray
    color_domain: "object"


def prepare_examples(images, *, bilateral_passes: int = 20) -> list[TrainingExample]:
    """Precompute the deterministic per-image domains once."""
    out = []
    for name, image, eyes in images:
        sketch = extract_sketch(image)
        color = extract_color_domain(image, bilateral_passes=bilateral_passes)
        out.append(TrainingExample(name, image, eyes, sketch.data, color))
    return out


def synthesize_batch(examples: list[TrainingExample], config: TrainConfig,
                     step: int) -> dict[str, torch.Tensor]:
    """Fresh masks/strokes/noise for one step, fully derived from (seed, step)."""
    from .dataprep import ColorMap, SketchMap

    params = config.mask_params()
    stroke_params = dataclasses.replace(
        params, strokeThickness=max(1, params.strokeThickness // 2))
    pick_rng = _substream(config.seed, 2, step)
    noise_rng = _substream(config.seed, 4, step)
    size = (config.imageSize, config.imageSize)

    stacks, gts, names = [], [], []
    for slot in range(config.batchSize):
        idx = int(pick_rng.random() * len(examples))
        ex = examples[idx]
        landmarks = Landmarks(eyePositions=ex.eyes)
        mask = generate_free_form_mask(
            _derived_seed(config.seed, 5, step, slot), size, landmarks, params)
        strokes = generate_free_form_mask(
            _derived_seed(config.seed, 6, step, slot), size, landmarks, stroke_params)
        color = apply_color_strokes(ex.color_domain, strokes)
        batch = assemble_batch(ex.image, mask, SketchMap(ex.sketch_domain), color,
                               noise_rng)
        stacks.append(batch.stacked())
        gts.append(ex.image)
        names.append(ex.name)

    stacked = torch.from_numpy(np.stack(stacks).transpose(0, 3, 1, 2)).float()
    gt = torch.from_numpy(np.stack(gts).transpose(0, 3, 1, 2)).float()
    return {
        "input": stacked,
        "gt": gt,
        "mask": stacked[:, 7:8],
        "conditioning": stacked[:, 3:8],  # sketch + color + mask
        "names": names,
    }


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise TrainingDivergedError(f"non-finite loss component: {name}")
    return value


def train_step(params: ModelParams, batch: dict[str, torch.Tensor],
               optimizers: dict[str, torch.optim.Optimizer],
               config: TrainConfig, step: int, extractor) -> dict[str, float]:
    """One adversarial update: dStepsPerGStep critic updates, then one
    generator update on the freshly composited output."""
    gen, disc = params.generator, params.discriminator
    weights = config.weights
    x, gt = batch["input"], batch["gt"]
    mask, cond = batch["mask"], batch["conditioning"]
    gp_rng = _substream(config.seed, 7, step)

    disc.train()
    gen.eval()
    d_loss_val = gp_val = 0.0
    for _ in range(max(1, config.dStepsPerGStep)):
        with torch.no_grad():
            fake = compose(gen(x), gt, mask)
        d_real = disc(gt, cond)
        d_fake = disc(fake, cond)
        gp = gradient_penalty(lambda u: disc(u, cond), fake, gt, mask, gp_rng)
        d_loss = discriminator_loss(d_real, d_fake, gp, weights.theta)
        if config.epsilonInDiscriminator:
            d_loss = d_loss + weights.epsilon * real_score_regularizer(d_real)
        _check_finite("d_loss", d_loss)
        optimizers["d"].zero_grad(set_to_none=True)
        d_loss.backward()
        optimizers["d"].step()
        d_loss_val, gp_val = float(d_loss.detach()), float(gp.detach())

    gen.train()
    disc.eval()  # spectral state frozen while the generator looks at D
    gen_out = gen(x)
    comp = compose(gen_out, gt, mask)
    feats_gen = extractor(gen_out)
    feats_comp = extractor(comp)
    with torch.no_grad():
        feats_gt = extractor(gt)
        d_real_eval = disc(gt, cond)
    components = GeneratorLossComponents(
        per_pixel=_check_finite("per_pixel", per_pixel_loss(gen_out, gt, mask, weights.alpha)),
        perceptual=_check_finite(
            "percept", perceptual_from_features(feats_gen, feats_comp, feats_gt)),
        adversarial=_check_finite("g_sn", gan_generator_loss(disc(comp, cond))),
        style_gen=_check_finite("style_gen", style_from_features(feats_gen, feats_gt)),
        style_comp=_check_finite("style_comp", style_from_features(feats_comp, feats_gt)),
        tv=_check_finite("tv", tv_loss(comp, mask)),
        real_score_square=_check_finite(
            "real_score_square", real_score_regularizer(d_real_eval)),
    )
    g_loss = total_generator_loss(components, weights)
    _check_finite("total", g_loss)
    optimizers["g"].zero_grad(set_to_none=True)
    g_loss.backward()
    optimizers["g"].step()
    gen.eval()

    return {
        "step": float(step),
        "per_pixel": float(components.per_pixel.detach()),
        "percept": float(components.perceptual.detach()),
        "g_sn": float(components.adversarial.detach()),
        "style": float((components.style_gen + components.style_comp).detach()),
        "tv": float(components.tv.detach()),
        "d_loss": d_loss_val,
        "gp": gp_val,
        "total": float(g_loss.detach()),
    }


def make_optimizers(params: ModelParams, config: TrainConfig) -> dict:
    return {
        "g": torch.optim.Adam(params.generator.parameters(),
                              lr=config.gLearningRate, betas=config.gMoments),
        "d": torch.optim.Adam(params.discriminator.parameters(),
                              lr=config.dLearningRate, betas=config.dMoments),
    }


_OPT_STATE_KEYS = ("step", "exp_avg", "exp_avg_sq")


def _optimizer_arrays(opt: torch.optim.Optimizer, module: torch.nn.Module,
                      prefix: str) -> dict[str, np.ndarray]:
    by_param = {id(p): name for name, p in module.named_parameters()}
    out = {}
    for group in opt.param_groups:
        for p in group["params"]:
            state = opt.state.get(p)
            if not state:
                continue
            name = by_param[id(p)]
            for key in _OPT_STATE_KEYS:
                value = state[key]
                if not torch.is_tensor(value):
                    value = torch.tensor(float(value), dtype=torch.float64)
                out[f"{prefix}{name}/{key}"] = ckpt._as_array(value)
    return out


def _restore_optimizer(opt: torch.optim.Optimizer, module: torch.nn.Module,
                       arrays: dict[str, np.ndarray]) -> None:
    params_by_name = dict(module.named_parameters())
    grouped: dict[str, dict[str, np.ndarray]] = {}
    for key, arr in arrays.items():
        name, state_key = key.rsplit("/", 1)
        grouped.setdefault(name, {})[state_key] = arr
    for name, states in grouped.items():
        p = params_by_name[name]
        entry = {}
        entry["step"] = torch.tensor(float(states["step"]), dtype=torch.float32)
        entry["exp_avg"] = torch.from_numpy(
            np.ascontiguousarray(states["exp_avg"])).to(p.dtype)
        entry["exp_avg_sq"] = torch.from_numpy(
            np.ascontiguousarray(states["exp_avg_sq"])).to(p.dtype)
        opt.state[p] = entry


def save_training_checkpoint(path, params: ModelParams, optimizers: dict | None,
                             step: int, config: TrainConfig) -> None:
    arrays = {}
    arrays.update(ckpt.collect_module_arrays(params.generator, "generator/"))
    arrays.update(ckpt.collect_module_arrays(params.discriminator, "discriminator/"))
    if optimizers:
        arrays.update(_optimizer_arrays(optimizers["g"], params.generator, "opt_g/"))
        arrays.update(_optimizer_arrays(optimizers["d"], params.discriminator, "opt_d/"))
    ckpt.write_checkpoint(path, step, config.to_dict(), arrays)


def load_training_checkpoint(path):
    """Returns (ModelParams, optimizers, step, TrainConfig) rebuilt exactly."""
    bundle = ckpt.read_checkpoint(path)
    config = TrainConfig.from_dict(bundle.config)
    params = ModelParams.create(config.generator, config.discriminator, seed=config.seed)
    ckpt.restore_module_arrays(params.generator, bundle.group("generator/"))
    ckpt.restore_module_arrays(params.discriminator, bundle.group("discriminator/"))
    optimizers = make_optimizers(params, config)
    _restore_optimizer(optimizers["g"], params.generator, bundle.group("opt_g/"))
    _restore_optimizer(optimizers["d"], params.discriminator, bundle.group("opt_d/"))
    return params, optimizers, bundle.step, config


def _checkpoint_steps(interval: int, steps: int) -> set[int]:
    marks = set(range(interval, steps + 1, interval)) if interval > 0 else set()
    marks.add(steps)
    return marks


def train_loop(config: TrainConfig, resume: str | None = None,
               progress=None) -> Path:
    """Run (or resume) training; returns the final checkpoint path.

    Writes loss.csv (one row per step), periodic checkpoints named
    ckpt_step_N.fegan, and loss-curve figures once the loop completes.
    """
    config.validate()
    if not config.datasetPath:
        raise FileNotFoundError("config.datasetPath is empty")
    run_dir = Path(config.runDir or
                   f"runs/{time.strftime('%Y%m%d-%H%M%S')}-seed{config.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)

    images = load_training_images(config.datasetPath, (config.imageSize, config.imageSize))
    examples = prepare_examples(images)
    extractor = RandomFeaturePyramid(seed=config.seed)

    if resume:
        params, optimizers, start_step, config_loaded = load_training_checkpoint(resume)
        config = dataclasses.replace(
            config_loaded, steps=config.steps, runDir=str(run_dir),
            datasetPath=config.datasetPath)
    else:
        params = ModelParams.create(config.generator, config.discriminator,
                                    seed=config.seed)
        optimizers = make_optimizers(params, config)
        start_step = 0

    csv_path = run_dir / "loss.csv"
    new_csv = not csv_path.exists() or not resume
    mode = "w" if new_csv else "a"
    marks = _checkpoint_steps(config.checkpointInterval, config.steps)

    final_path = run_dir / f"ckpt_step_{config.steps:06d}.fegan"
    if config.steps == 0 or start_step >= config.steps:
        save_training_checkpoint(final_path, params, optimizers, start_step, config)
        return final_path

    with open(csv_path, mode) as csv:
        if new_csv:
            csv.write(",".join(LOSS_CSV_COLUMNS) + "\n")
        for step in range(start_step + 1, config.steps + 1):
            batch = synthesize_batch(examples, config, step)
            report = train_step(params, batch, optimizers, config, step, extractor)
            csv.write(",".join(f"{report[c]:.10g}" for c in LOSS_CSV_COLUMNS) + "\n")
            csv.flush()
            if progress:
                progress(report)
            if step in marks:
                save_training_checkpoint(run_dir / f"ckpt_step_{step:06d}.fegan",
                                         params, optimizers, step, config)

    from .report import render_loss_curves
    render_loss_curves(csv_path, run_dir)
    return final_path


def validation_records(examples: list[TrainingExample], config: TrainConfig
                       ) -> list[tuple[EditBatch, np.ndarray]]:
    """Deterministic per-image batches (fixed masks) for evaluation."""
    from .dataprep import SketchMap

    params = config.mask_params()
    size = (config.imageSize, config.imageSize)
    records = []
    for idx, ex in enumerate(examples):
        landmarks = Landmarks(eyePositions=ex.eyes)
        mask = generate_free_form_mask(
            _derived_seed(config.seed, 8, idx), size, landmarks, params)
        strokes = generate_free_form_mask(
            _derived_seed(config.seed, 9, idx), size, landmarks,
            dataclasses.replace(params, strokeThickness=max(1, params.strokeThickness // 2)))
        batch = assemble_batch(ex.image, mask, SketchMap(ex.sketch_domain),
                               apply_color_strokes(ex.color_domain, strokes),
                               _substream(config.seed, 10, idx))
        records.append((batch, ex.image))
    return records


PSNR_INF_SENTINEL = float("inf")


def evaluate(model, records: list[tuple[EditBatch, np.ndarray]],
             weights: LossWeights | None = None, extractor=None) -> dict[str, float]:
    """Average masked-region L1/PSNR and loss components over records.

    `model` is a ModelParams or any callable mapping the 1 x 9 x H x W
    input tensor to a 1 x 3 x H x W output. Records with an identical
    composite get the infinite-PSNR sentinel. Metrics are averages of
    per-record values, so they do not depend on record order.
    """
    if not records:
        raise ValueError("validation set is empty")
    weights = weights or LossWeights()
    extractor = extractor or RandomFeaturePyramid(seed=0)
    is_pair = isinstance(model, ModelParams)
    forward = model.generator if is_pair else model
    if is_pair:
        model.generator.eval()
        model.discriminator.eval()

    sums: dict[str, float] = {}
    for batch, gt in records:
        x = batch_to_tensor(batch.stacked())
        gt_t = torch.from_numpy(gt.transpose(2, 0, 1)[None]).float()
        mask = x[:, 7:8]
        with torch.no_grad():
            gen_out = forward(x)
            comp = compose(gen_out, gt_t, mask)
            masked_count = float(mask.sum()) * gt_t.shape[1]
            if masked_count == 0:
                l1 = 0.0
                mse = 0.0
            else:
                diff = (comp - gt_t) * mask
                l1 = float(diff.abs().sum()) / masked_count
                mse = float(diff.pow(2).sum()) / masked_count
            psnr = PSNR_INF_SENTINEL if mse == 0 else 10.0 * np.log10(4.0 / mse)
            row = {
                "masked_l1": l1,
                "masked_psnr": psnr,
                "per_pixel": float(per_pixel_loss(gen_out, gt_t, mask, weights.alpha)),
                "percept": float(perceptual_loss(gen_out, comp, gt_t, extractor)),
                "style": float(style_loss(gen_out, gt_t, extractor)
                               + style_loss(comp, gt_t, extractor)),
                "tv": float(tv_loss(comp, mask)),
            }
            if is_pair:
                cond = x[:, 3:8]
                row["g_sn"] = float(gan_generator_loss(
                    model.discriminator(comp, cond)))
                row["real_score_square"] = float(real_score_regularizer(
                    model.discriminator(gt_t, cond)))
        for key, value in row.items():
            sums[key] = sums.get(key, 0.0) + value
    return {key: value / len(records) for key, value in sums.items()}
