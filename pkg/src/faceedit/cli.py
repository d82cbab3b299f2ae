"""Command-line entry points.

    faceedit maskgen preview  --seed S --size H,W --out FILE [--config FILE]
    faceedit dataprep build   --input-dir D --out-dir D2 --size H,W --seed S
    faceedit train            --config FILE [--resume CKPT]
    faceedit evaluate         --checkpoint CKPT --dataset DIR [--out-dir D]
    faceedit serve            --checkpoint CKPT --port P [--frontend DIR]
    faceedit report           --csv FILE --out-dir D

Config files are flat `key = value` text; mask keys mirror the sampler's
hyperparameter names (maxDraw, maxLine, maxAngle, maxLength,
strokeThickness, hairMaskProbability, eyeLineCount).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) == 1:
        side = int(parts[0])
        return side, side
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("size must be H,W")
    return int(parts[0]), int(parts[1])


def _mask_params_from_config(path, size):
    from .maskgen import MaskGenParams
    from .trainer import _MASK_KEYS, parse_flat_config

    params = MaskGenParams.defaults_for(size)
    if path:
        for key, value in parse_flat_config(Path(path).read_text()).items():
            if key not in _MASK_KEYS:
                raise SystemExit(f"unknown mask config key: {key}")
            setattr(params, key, _MASK_KEYS[key](value))
    return params


def cmd_maskgen_preview(args) -> int:
    from . import pngio
    from .maskgen import Landmarks, generate_free_form_mask, synthetic_hair_mask
    from .dataprep import default_eye_positions

    size = args.size
    params = _mask_params_from_config(args.config, size)
    landmarks = Landmarks(
        eyePositions=default_eye_positions(size),
        hairMask=synthetic_hair_mask(size) if params.hairMaskProbability > 0 else None)
    mask = generate_free_form_mask(args.seed, size, landmarks, params)
    pngio.save_binary(args.out, mask.data)
    print(f"wrote {args.out} ({mask.data.mean():.3%} erased)")

    if args.figure:
        from .report import render_mask_grid
        grid = [(f"seed {s}",
                 generate_free_form_mask(s, size, landmarks, params).data)
                for s in range(args.seed, args.seed + 8)]
        render_mask_grid(grid, args.figure)
        print(f"wrote {args.figure}")
    return 0


def cmd_dataprep_build(args) -> int:
    from . import pngio
    from .dataprep import (apply_color_strokes, assemble_batch, extract_color_domain,
                           extract_sketch, load_training_images, write_record)
    from .maskgen import Landmarks, MaskGenParams, generate_free_form_mask

    size = args.size
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = _mask_params_from_config(args.config, size)
    stroke_params = dataclasses.replace(
        params, strokeThickness=max(1, params.strokeThickness // 2))

    images = load_training_images(args.input_dir, size)
    for index, (name, image, eyes) in enumerate(images):
        landmarks = Landmarks(eyePositions=eyes)
        seed = np.random.SeedSequence(entropy=args.seed, spawn_key=(index,))
        mask_seed, stroke_seed, noise_seed = (int(s) for s in seed.generate_state(3))
        mask = generate_free_form_mask(mask_seed, size, landmarks, params)
        strokes = generate_free_form_mask(stroke_seed, size, landmarks, stroke_params)
        sketch = extract_sketch(image)
        color = apply_color_strokes(
            extract_color_domain(image, bilateral_passes=args.bilateral_passes), strokes)
        batch = assemble_batch(image, mask, sketch, color,
                               np.random.default_rng(noise_seed))
        stem = Path(name).stem
        write_record(out_dir / f"{stem}.feb1", batch, image)
        if args.emit_png:
            pngio.save_binary(out_dir / f"{stem}_mask.png", mask.data)
            pngio.save_binary(out_dir / f"{stem}_sketch.png", sketch.data)
            pngio.save_image(out_dir / f"{stem}_color.png", color.data)
            pngio.save_image(out_dir / f"{stem}_incomplete.png", batch.incomplete)
        print(f"{name}: mask {mask.data.mean():.3%}, sketch {sketch.data.mean():.3%}")
    print(f"wrote {len(images)} records to {out_dir}")
    return 0


def cmd_train(args) -> int:
    from .trainer import load_train_config, train_loop

    config = load_train_config(args.config)
    if args.steps is not None:
        config.steps = args.steps

    def progress(report):
        step = int(report["step"])
        if step % args.log_every == 0:
            print(f"step {step}: total {report['total']:.4f} "
                  f"per_pixel {report['per_pixel']:.4f} d {report['d_loss']:.4f}")

    final = train_loop(config, resume=args.resume, progress=progress)
    print(f"final checkpoint: {final}")
    return 0


def cmd_evaluate(args) -> int:
    import csv as csv_mod

    from .networks import batch_to_tensor, compose
    from .report import render_eval_panel
    from .trainer import (TrainConfig, evaluate, load_training_checkpoint,
                          prepare_examples, validation_records)
    from .dataprep import load_training_images
    import torch

    params, _, step, config = load_training_checkpoint(args.checkpoint)
    images = load_training_images(args.dataset, (config.imageSize, config.imageSize))
    examples = prepare_examples(images)
    records = validation_records(examples, config)
    metrics = evaluate(params, records, config.weights)

    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(sorted(metrics))
        writer.writerow([f"{metrics[k]:.8g}" for k in sorted(metrics)])
    panels = []
    for batch, gt in records[:4]:
        x = batch_to_tensor(batch.stacked())
        with torch.no_grad():
            comp = compose(params.generator(x),
                           torch.from_numpy(gt.transpose(2, 0, 1)[None]), x[:, 7:8])
        panels.append((gt, batch.incomplete, comp[0].numpy().transpose(1, 2, 0)))
    render_eval_panel(panels, out_dir / "eval_panel.png")
    for key in sorted(metrics):
        print(f"{key}: {metrics[key]:.6g}")
    print(f"wrote {csv_path} and {out_dir / 'eval_panel.png'} (checkpoint step {step})")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    frontend = args.frontend
    if frontend is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend = bundled if bundled.is_dir() else None
    serve(args.checkpoint, host=args.host, port=args.port, frontend_dir=frontend)
    return 0


def cmd_report(args) -> int:
    from .report import render_loss_curves

    out = render_loss_curves(args.csv, args.out_dir)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faceedit",
                                     description="free-form face editing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("maskgen", help="mask sampler utilities")
    msub = p.add_subparsers(dest="subcommand", required=True)
    prev = msub.add_parser("preview", help="render one sampled mask to a 1-bit PNG")
    prev.add_argument("--seed", type=int, required=True)
    prev.add_argument("--size", type=_parse_size, required=True, metavar="H,W")
    prev.add_argument("--out", required=True)
    prev.add_argument("--config", help="flat key=value mask hyperparameters")
    prev.add_argument("--figure", help="optional PNG figure with a grid of seeds")
    prev.set_defaults(func=cmd_maskgen_preview)

    p = sub.add_parser("dataprep", help="dataset construction")
    dsub = p.add_subparsers(dest="subcommand", required=True)
    build = dsub.add_parser("build", help="write FEB1 records for an image directory")
    build.add_argument("--input-dir", required=True)
    build.add_argument("--out-dir", required=True)
    build.add_argument("--size", type=_parse_size, required=True, metavar="H,W")
    build.add_argument("--seed", type=int, required=True)
    build.add_argument("--config", help="mask hyperparameter file")
    build.add_argument("--emit-png", action="store_true",
                       help="also write individual layers as PNG")
    build.add_argument("--bilateral-passes", type=int, default=20)
    build.set_defaults(func=cmd_dataprep_build)

    p = sub.add_parser("train", help="run the adversarial training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.add_argument("--log-every", type=int, default=25)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics and sample panel for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the edit service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--frontend", help="static bundle directory to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="render figures from a loss CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
