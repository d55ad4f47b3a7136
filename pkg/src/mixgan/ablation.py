"""Module-accumulation ablation schedule and its report.

Five configurations build on each other: image-only adversarial baseline,
then mix-consistency regularization, then the reverse-skip feature bank, then
the pixel-level discriminator branch, and finally the two-phase training
schedule. Each is trained on the phantom set and scored with the default
extractor's Frechet distance at initialization and after training.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from .data import ArrayDataset, load_dataset
from .evaluation import compute_stats, default_extractor, embed, frechet_distance
from .training import TrainConfig, build_state, generate_samples, load_checkpoint, train

SCHEDULE: tuple[tuple[str, dict], ...] = (
    ("base", dict(attnmix=False, reverse_skip=False, pixel_branch=False, two_phase=False)),
    ("+attnmix", dict(attnmix=True, reverse_skip=False, pixel_branch=False, two_phase=False)),
    ("+reverse_skip", dict(attnmix=True, reverse_skip=True, pixel_branch=False, two_phase=False)),
    ("+hierarchical_d", dict(attnmix=True, reverse_skip=True, pixel_branch=True, two_phase=False)),
    ("+two_phase", dict(attnmix=True, reverse_skip=True, pixel_branch=True, two_phase=True)),
)


@dataclass
class AblationRun:
    row: str
    seed: int
    fid_init: float
    fid_final: float
    out_dir: str


@dataclass
class AblationReport:
    runs: list[AblationRun]
    rows: list[str]

    def median_fid(self, row: str, which: str = "final") -> float:
        vals = [getattr(r, f"fid_{which}") for r in self.runs if r.row == row]
        return statistics.median(vals)

    def table_rows(self) -> list[dict]:
        out = []
        for row in self.rows:
            out.append(
                {
                    "row": row,
                    "median_fid_init": self.median_fid(row, "init"),
                    "median_fid_final": self.median_fid(row, "final"),
                    "fids": sorted(
                        round(r.fid_final, 3) for r in self.runs if r.row == row
                    ),
                }
            )
        return out

    def to_text(self) -> str:
        lines = [f"{'configuration':<18} {'median FID':>12} {'per-seed FIDs'}"]
        for entry in self.table_rows():
            fids = ", ".join(f"{v:.3f}" for v in entry["fids"])
            lines.append(f"{entry['row']:<18} {entry['median_fid_final']:>12.3f}   [{fids}]")
        monotone = all(
            earlier["median_fid_final"] >= later["median_fid_final"]
            for earlier, later in zip(self.table_rows(), self.table_rows()[1:])
        )
        lines.append("")
        lines.append(f"strict per-row monotone improvement: {'yes' if monotone else 'no'}")
        return "\n".join(lines) + "\n"


def desk_config(
    resolution: int = 16,
    steps: int = 2000,
    seed: int = 0,
    phantom_size: int = 512,
    batch_size: int = 32,
    **overrides,
) -> TrainConfig:
    """Small, fast configuration used for desk-scale runs and ablations."""
    steps_per_epoch = max(1, phantom_size // batch_size)
    total_epochs = max(1, -(-steps // steps_per_epoch))
    warmup = max(1, total_epochs // 5)
    base = dict(
        data_source="phantom",
        phantom_size=phantom_size,
        resolution=resolution,
        latent_dim=100,
        g_base_channels=32,
        d_base_channels=32,
        pixel_channels=32,
        batch_size=batch_size,
        total_epochs=total_epochs,
        warmup_epochs=warmup,
        max_steps=steps,
        seed=seed,
        data_seed=7,
        sample_grid_count=16,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _fid_against(dataset: ArrayDataset, images, extractor) -> float:
    real_stats = compute_stats(embed(dataset.images, extractor))
    fake_stats = compute_stats(embed(images, extractor))
    return frechet_distance(real_stats, fake_stats)


def run_single(
    config: TrainConfig,
    dataset: ArrayDataset,
    out_dir: Path,
    row: str,
    eval_count: int = 512,
    eval_seed: int = 123,
) -> AblationRun:
    extractor = default_extractor(in_channels=config.image_channels)
    count = min(eval_count, len(dataset))

    init_state = build_state(config)
    init_images = generate_samples(
        init_state.generator, init_state.bank.snapshot(), count, eval_seed
    )
    fid_init = _fid_against(dataset, init_images, extractor)

    result = train(config, dataset=dataset, out_dir=out_dir)
    final_state = load_checkpoint(result.checkpoint_path)
    final_images = generate_samples(
        final_state.generator, final_state.bank.snapshot(), count, eval_seed
    )
    fid_final = _fid_against(dataset, final_images, extractor)
    return AblationRun(
        row=row, seed=config.seed, fid_init=fid_init, fid_final=fid_final, out_dir=str(out_dir)
    )


def run_schedule(
    out_dir: str | Path,
    seeds: tuple[int, ...] = (0, 1, 2),
    steps: int = 2000,
    resolution: int = 16,
    phantom_size: int = 512,
    eval_count: int = 512,
    progress: bool = False,
) -> AblationReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_cfg = desk_config(resolution=resolution, steps=steps, phantom_size=phantom_size)
    dataset = load_dataset(base_cfg.dataset_spec())

    runs = []
    for row, toggles in SCHEDULE:
        for seed in seeds:
            cfg = desk_config(
                resolution=resolution,
                steps=steps,
                seed=seed,
                phantom_size=phantom_size,
                **toggles,
            )
            run_dir = out / f"{row.strip('+')}_seed{seed}"
            run = run_single(cfg, dataset, run_dir, row, eval_count=eval_count)
            runs.append(run)
            if progress:
                print(
                    f"[ablate] {row:<16} seed={seed} "
                    f"fid_init={run.fid_init:.3f} fid_final={run.fid_final:.3f}",
                    flush=True,
                )

    report = AblationReport(runs=runs, rows=[row for row, _ in SCHEDULE])
    (out / "table.txt").write_text(report.to_text())
    (out / "table.json").write_text(
        json.dumps(
            {
                "rows": report.table_rows(),
                "runs": [dataclasses.asdict(r) for r in runs],
            },
            indent=2,
        )
    )
    return report
