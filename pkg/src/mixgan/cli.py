"""Command-line entry point.

Subcommands: train, sample, eval-fid, inspect-mix, ablate. Exit codes:
0 ok, 2 bad arguments, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import torch

from . import runconfig
from .ablation import run_schedule
from .data import DatasetSpec, load_dataset
from .errors import DataError, NumericalError
from .evaluation import eval_run
from .masks import attention_to_saliency, attnmix_compose, make_mix_label, sample_cut_mask
from .generator import sample_latent
from .training import (
    TrainConfig,
    build_state,
    generate_samples,
    load_checkpoint,
    train,
)
from .viz import mask_saliency_panel, save_grid

EXIT_OK = 0
EXIT_BAD_ARGS = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_train_parser(sub) -> None:
    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="flat key=value config file to start from")
    p.add_argument("--data", help="'phantom' or an image directory")
    p.add_argument("--resolution", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int, help="total epochs")
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--steps", type=int, help="hard step cap (0 = none)")
    p.add_argument("--seed", type=int)
    p.add_argument("--phantom-size", type=int)
    p.add_argument("--lr-g", type=float)
    p.add_argument("--lr-d", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--grid-every", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    for toggle in ("attnmix", "reverse-skip", "pixel-branch", "two-phase"):
        name = toggle.replace("-", "_")
        p.add_argument(f"--no-{toggle}", dest=name, action="store_false", default=None)
        p.add_argument(f"--{toggle}", dest=name, action="store_true")


_TRAIN_FLAG_FIELDS = {
    "resolution": "resolution",
    "batch_size": "batch_size",
    "epochs": "total_epochs",
    "warmup_epochs": "warmup_epochs",
    "steps": "max_steps",
    "seed": "seed",
    "phantom_size": "phantom_size",
    "lr_g": "lr_g",
    "lr_d": "lr_d",
    "checkpoint_every": "checkpoint_every",
    "grid_every": "grid_every",
    "attnmix": "attnmix",
    "reverse_skip": "reverse_skip",
    "pixel_branch": "pixel_branch",
    "two_phase": "two_phase",
}


def _build_train_config(args) -> TrainConfig:
    if args.config:
        config = runconfig.read_config(args.config, TrainConfig)
    else:
        config = TrainConfig()
    overrides = {}
    if args.data:
        overrides["data_source"] = args.data
    for attr, field in _TRAIN_FLAG_FIELDS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[field] = value
    return dataclasses.replace(config, **overrides) if overrides else config


def _cmd_train(args) -> int:
    config = _build_train_config(args)
    result = train(config, out_dir=args.out, resume_from=args.resume)
    print(f"trained {result.steps_run} steps over {result.epochs_run} epochs")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")
    print(f"final grid: {result.final_grid_path}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    state = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else state.config.seed + 9999
    bank_view = {} if args.zero_bank else state.bank.snapshot()
    images = generate_samples(state.generator, bank_view, args.count, seed)
    out = Path(args.out)
    path = save_grid(images, out if out.suffix else out / "samples.png")
    print(f"wrote {args.count} samples to {path}")
    return EXIT_OK


def _cmd_eval_fid(args) -> int:
    state = load_checkpoint(args.checkpoint)
    spec = DatasetSpec(
        source=args.data,
        resolution=state.config.resolution,
        channel_mode=state.config.channel_mode,
        size=args.phantom_size,
        seed=state.config.data_seed,
    )
    dataset = load_dataset(spec)
    report = eval_run(
        args.checkpoint,
        dataset,
        sample_count=args.count,
        seed=args.seed,
        use_bank=not args.zero_bank,
        out_dir=args.out,
    )
    print(f"fid = {report['fid']:.4f}  (n = {report['sample_count']} per side)")
    return EXIT_OK


def _cmd_inspect_mix(args) -> int:
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
    else:
        state = build_state(TrainConfig(resolution=args.resolution, seed=args.seed))
    config = state.config

    spec = DatasetSpec(
        source=args.data,
        resolution=config.resolution,
        channel_mode=config.channel_mode,
        size=max(args.rows, 16),
        seed=config.data_seed,
    )
    dataset = load_dataset(spec)
    if len(dataset) < args.rows:
        raise DataError(f"need at least {args.rows} images, dataset has {len(dataset)}")
    real = dataset.images[: args.rows]

    rng = torch.Generator().manual_seed(args.seed)
    state.generator.eval()
    with torch.no_grad():
        z = sample_latent(args.rows, config.latent_dim, rng)
        gen_out = state.generator(z, state.bank.snapshot())
    lo = args.mask_ratio_min if args.mask_ratio_min is not None else config.mask_ratio_min
    hi = args.mask_ratio_max if args.mask_ratio_max is not None else config.mask_ratio_max
    mask = sample_cut_mask(args.rows, config.resolution, config.resolution, (lo, hi), rng)
    saliency = attention_to_saliency(gen_out.attention, config.resolution, config.resolution)
    label = make_mix_label(mask, saliency, config.alpha)
    mixed = attnmix_compose(real, gen_out.images, mask)
    overlay = mask_saliency_panel(mask.values, saliency.values)

    panels = torch.cat(
        [
            torch.stack([gen_out.images[i], real[i], mixed[i], overlay[i]])
            for i in range(args.rows)
        ]
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid_path = save_grid(panels, out / "mix_panels.png", columns=4)

    lines = ["row  lambda0  lambda"]
    for i in range(args.rows):
        lam0, lam = float(mask.area_ratio[i]), float(label.lam[i])
        lines.append(f"{i:>3}  {lam0:.4f}   {lam:.4f}")
        print(f"row {i}: lambda0 = {lam0:.4f}, lambda = {lam:.4f}")
    (out / "mix_labels.txt").write_text("\n".join(lines) + "\n")
    print(f"panels [fake | real | mixed | mask+saliency]: {grid_path}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = run_schedule(
        args.out,
        seeds=seeds,
        steps=args.steps,
        resolution=args.resolution,
        phantom_size=args.phantom_size,
        progress=True,
    )
    print(report.to_text())
    print(f"table written to {Path(args.out) / 'table.txt'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixgan",
        description="Adversarial image synthesis lab: mix-consistency training, "
        "hierarchical discrimination, reverse-skip feature fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train_parser(sub)

    p = sub.add_parser("sample", help="generate an image grid from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PNG path or directory")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--zero-bank", action="store_true", help="ignore the stored feature bank")

    p = sub.add_parser("eval-fid", help="Frechet distance of a checkpoint against a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="phantom")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phantom-size", type=int, default=512)
    p.add_argument("--zero-bank", action="store_true")
    p.add_argument("--out", default=None, help="directory for report.json and sample grid")

    p = sub.add_parser(
        "inspect-mix", help="render fake/real/mixed panels with their label allocation"
    )
    p.add_argument("--checkpoint", default=None, help="optional; fresh generator otherwise")
    p.add_argument("--data", default="phantom")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64, help="used without --checkpoint")
    p.add_argument("--mask-ratio-min", type=float, default=None, help="override config bound")
    p.add_argument("--mask-ratio-max", type=float, default=None, help="override config bound")

    p = sub.add_parser("ablate", help="run the 5-row module-accumulation schedule")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--resolution", type=int, default=16)
    p.add_argument("--phantom-size", type=int, default=512)

    return parser


_COMMANDS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval-fid": _cmd_eval_fid,
    "inspect-mix": _cmd_inspect_mix,
    "ablate": _cmd_ablate,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
