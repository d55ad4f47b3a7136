"""Two-phase training loop: conventional adversarial warmup on real data,
then mix-regularized training with differentiable augmentation, plus
checkpointing, metrics logging, and deterministic sampling.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor

from . import runconfig
from .augment import AugPolicy, diff_augment
from .data import ArrayDataset, DatasetSpec, load_dataset
from .discriminator import Discriminator, DiscriminatorConfig
from .errors import DataError, NumericalError
from .feature_bank import FeatureBank
from .generator import Generator, GeneratorConfig, sample_latent
from .losses import (
    DLossParts,
    GLossParts,
    LossWeights,
    adv_d_loss,
    adv_g_loss,
    consistency_loss,
    feature_consistency_loss,
    total_d_loss,
    total_g_loss,
)
from .masks import attention_to_saliency, attnmix_compose, make_mix_label, sample_cut_mask
from .viz import save_grid

CHECKPOINT_FORMAT_VERSION = 1
GRID_SEED_OFFSET = 9999


@dataclass(frozen=True)
class TrainConfig:
    # data
    data_source: str = "phantom"
    phantom_size: int = 512
    resolution: int = 64
    channel_mode: str = "grayscale"
    data_seed: int = 0
    # model
    latent_dim: int = 100
    g_base_channels: int = 64
    d_base_channels: int = 64
    pixel_channels: int = 64
    attention_resolution: int = 0  # 0 picks resolution // 2
    shared_stem: int = 0
    spectral_norm: bool = False
    # optimization
    batch_size: int = 32
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    total_epochs: int = 200
    warmup_epochs: int = 100
    max_steps: int = 0  # 0 = no cap
    # loss weights
    beta1: float = 1.0
    beta2: float = 1.0
    beta_g: float = 1.0
    feature_cons_weight: float = 0.1
    # mixing
    alpha: float = 0.5
    mask_ratio_min: float = 0.2
    mask_ratio_max: float = 0.8
    # augmentation
    aug_ops: tuple[str, ...] = ("brightness", "translation", "cutout")
    aug_brightness: float = 0.25
    aug_contrast: float = 0.25
    aug_translation: float = 0.125
    aug_cutout: float = 0.25
    # reverse skip bank
    bank_momentum: float = 0.1
    bank_mode: str = "ema"  # "latest" replaces the bank every step
    # module toggles for ablation
    attnmix: bool = True
    reverse_skip: bool = True
    pixel_branch: bool = True
    two_phase: bool = True
    # bookkeeping
    seed: int = 0
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only
    grid_every: int = 0
    sample_grid_count: int = 16

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_epochs > self.total_epochs:
            raise ValueError(
                f"warmup_epochs {self.warmup_epochs} exceeds total_epochs {self.total_epochs}"
            )
        if not 0.0 <= self.mask_ratio_min <= self.mask_ratio_max <= 1.0:
            raise ValueError("mask ratio bounds must satisfy 0 <= min <= max <= 1")
        if self.bank_mode not in ("ema", "latest"):
            raise ValueError(f"bank_mode must be ema or latest, got {self.bank_mode}")
        LossWeights(self.beta1, self.beta2, self.beta_g, self.feature_cons_weight)

    @property
    def image_channels(self) -> int:
        return 1 if self.channel_mode == "grayscale" else 3

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.beta1, self.beta2, self.beta_g, self.feature_cons_weight)

    def aug_policy(self) -> AugPolicy:
        return AugPolicy(
            ops=self.aug_ops,
            brightness_range=(-self.aug_brightness, self.aug_brightness),
            contrast_range=(1.0 - self.aug_contrast, 1.0 + self.aug_contrast),
            translation_frac=self.aug_translation,
            cutout_frac=self.aug_cutout,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            source=self.data_source,
            resolution=self.resolution,
            channel_mode=self.channel_mode,
            size=self.phantom_size,
            seed=self.data_seed,
        )


def phase_for_epoch(config: TrainConfig, epoch: int) -> str:
    if not config.attnmix:
        return "warmup"
    warmup = config.warmup_epochs if config.two_phase else 0
    return "warmup" if epoch < warmup else "augmented"


class TrainState:
    """Networks, bank, optimizers, and the step RNG of one training run."""

    def __init__(
        self,
        config: TrainConfig,
        generator: Generator,
        discriminator: Discriminator,
        bank: FeatureBank,
        opt_g: torch.optim.Adam,
        opt_d: torch.optim.Adam,
        rng: torch.Generator,
        shuffle_rng: torch.Generator,
    ):
        self.config = config
        self.generator = generator
        self.discriminator = discriminator
        self.bank = bank
        self.opt_g = opt_g
        self.opt_d = opt_d
        self.rng = rng
        self.shuffle_rng = shuffle_rng
        self.epoch = 0
        self.step = 0


def build_state(config: TrainConfig) -> TrainState:
    torch.manual_seed(config.seed)

    disc = Discriminator(
        DiscriminatorConfig(
            resolution=config.resolution,
            in_channels=config.image_channels,
            base_channels=config.d_base_channels,
            pixel_channels=config.pixel_channels,
            shared_stem=config.shared_stem,
            spectral_norm=config.spectral_norm,
        )
    )
    feat_channels = disc.feature_channels()

    gen_cfg = GeneratorConfig(
        latent_dim=config.latent_dim,
        base_channels=config.g_base_channels,
        resolution=config.resolution,
        attention_resolution=config.attention_resolution,
        out_channels=config.image_channels,
    )
    skip_res = tuple(sorted(set(gen_cfg.feature_resolutions()) & set(feat_channels)))
    gen_cfg = dataclasses.replace(
        gen_cfg,
        skip_resolutions=skip_res,
        skip_channels={r: feat_channels[r] for r in skip_res},
    )
    gen = Generator(gen_cfg)

    bank = FeatureBank(skip_res, momentum=config.bank_momentum)
    opt_g = torch.optim.Adam(
        gen.parameters(), lr=config.lr_g, betas=(config.adam_beta1, config.adam_beta2)
    )
    opt_d = torch.optim.Adam(
        disc.parameters(), lr=config.lr_d, betas=(config.adam_beta1, config.adam_beta2)
    )
    rng = torch.Generator().manual_seed(config.seed)
    shuffle_rng = torch.Generator().manual_seed(config.seed + 1)
    return TrainState(config, gen, disc, bank, opt_g, opt_d, rng, shuffle_rng)


def _check_finite(value: Tensor, term: str, state: TrainState) -> None:
    if not torch.isfinite(value).all():
        raise NumericalError(
            f"non-finite {term} ({float(value.detach()):g}) at step {state.step} "
            f"(seed {state.config.seed})"
        )


def train_step(state: TrainState, batch: Tensor, phase: str) -> dict:
    """One discriminator update followed by one generator update.

    In the augmented phase both discriminator inputs pass through the
    augmentation policy and the mix-consistency terms join the discriminator
    objective; the warmup phase is conventional adversarial training.
    """
    if phase not in ("warmup", "augmented"):
        raise ValueError(f"unknown phase {phase!r}")
    cfg = state.config
    gen, disc = state.generator, state.discriminator
    rng = state.rng
    weights = cfg.loss_weights()
    augmented = phase == "augmented"
    t_start = time.perf_counter()

    gen.train()
    disc.train()
    bank_view = state.bank.snapshot() if cfg.reverse_skip else {}

    z = sample_latent(batch.shape[0], cfg.latent_dim, rng)
    gen_out = gen(z, bank_view)
    fake = gen_out.images
    fake_detached = fake.detach()

    policy = cfg.aug_policy()
    if augmented:
        real_in = diff_augment(batch, policy, rng)
        fake_in = diff_augment(fake_detached, policy, rng)
    else:
        real_in, fake_in = batch, fake_detached

    feature_cons_active = augmented and weights.beta2 > 0 and weights.feature_cons_weight > 0
    capture_real = cfg.reverse_skip or feature_cons_active
    real_out = disc(real_in, capture_features=capture_real)
    fake_out = disc(fake_in, capture_features=feature_cons_active)

    l_d_img, l_d_pix = adv_d_loss(real_out, fake_out)
    zero = torch.zeros(())
    cons_terms = None
    l_feat = zero
    lam = None
    if augmented:
        mask = sample_cut_mask(
            batch.shape[0],
            cfg.resolution,
            cfg.resolution,
            (cfg.mask_ratio_min, cfg.mask_ratio_max),
            rng,
        )
        saliency = attention_to_saliency(
            gen_out.attention.detach(), cfg.resolution, cfg.resolution
        )
        label = make_mix_label(mask, saliency, cfg.alpha)
        lam = label.lam
        mixed = attnmix_compose(real_in, fake_in, mask)
        mixed_out = disc(mixed, capture_features=feature_cons_active)
        cons_terms = consistency_loss(
            mixed_out, real_out, fake_out, mask, label, include_pixel=cfg.pixel_branch
        )
        if feature_cons_active:
            l_feat = feature_consistency_loss(
                mixed_out.features, real_out.features, fake_out.features, mask
            )

    d_parts = DLossParts(
        img=l_d_img,
        pixel=l_d_pix if cfg.pixel_branch else zero,
        cons=cons_terms.total if cons_terms is not None else zero,
        feature_cons=l_feat,
    )
    loss_d = total_d_loss(d_parts, weights)
    _check_finite(loss_d, "discriminator loss", state)
    state.opt_d.zero_grad()
    loss_d.backward()
    state.opt_d.step()

    if cfg.reverse_skip:
        momentum = 1.0 if cfg.bank_mode == "latest" else None
        state.bank.update(
            {r: real_out.features[r] for r in state.bank.resolutions}, momentum=momentum
        )

    fake_for_g = diff_augment(fake, policy, rng) if augmented else fake
    g_fake_out = disc(fake_for_g)
    l_g_img, l_g_pix = adv_g_loss(g_fake_out)
    g_parts = GLossParts(img=l_g_img, pixel=l_g_pix if cfg.pixel_branch else zero)
    loss_g = total_g_loss(g_parts, weights)
    _check_finite(loss_g, "generator loss", state)
    state.opt_g.zero_grad()
    loss_g.backward()
    state.opt_g.step()

    def scalar(t: Tensor | None):
        return float(t.detach()) if t is not None else None

    metrics = {
        "step": state.step,
        "phase": phase,
        "aug_active": augmented,
        "cons_active": cons_terms is not None,
        "d_loss": scalar(loss_d),
        "d_loss_img": scalar(l_d_img),
        "d_loss_pixel": scalar(l_d_pix) if cfg.pixel_branch else None,
        "cons_loss_img": scalar(cons_terms.image) if cons_terms is not None else None,
        "cons_loss_pixel": (
            scalar(cons_terms.pixel) if cons_terms is not None and cfg.pixel_branch else None
        ),
        "feat_cons_loss": scalar(l_feat) if feature_cons_active else None,
        "g_loss": scalar(loss_g),
        "g_loss_img": scalar(l_g_img),
        "g_loss_pixel": scalar(l_g_pix) if cfg.pixel_branch else None,
        "lambda_mean": scalar(lam.mean()) if lam is not None else None,
        "lambda_std": scalar(lam.std(unbiased=False)) if lam is not None else None,
        "step_time_s": time.perf_counter() - t_start,
    }
    return metrics


@dataclass
class TrainResult:
    out_dir: Path
    checkpoint_path: Path
    metrics_path: Path
    final_grid_path: Path
    epochs_run: int
    steps_run: int


def generate_samples(
    generator: Generator,
    bank_view: dict[int, Tensor],
    count: int,
    seed: int,
    batch_size: int = 64,
) -> Tensor:
    """Deterministic eval-mode sampling from the generator."""
    was_training = generator.training
    generator.eval()
    rng = torch.Generator().manual_seed(seed)
    chunks = []
    with torch.no_grad():
        remaining = count
        while remaining > 0:
            n = min(batch_size, remaining)
            z = sample_latent(n, generator.config.latent_dim, rng)
            chunks.append(generator(z, bank_view).images)
            remaining -= n
    if was_training:
        generator.train()
    return torch.cat(chunks, dim=0)


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": dataclasses.asdict(state.config),
            "epoch": state.epoch,
            "step": state.step,
            "generator": state.generator.state_dict(),
            "discriminator": state.discriminator.state_dict(),
            "bank": state.bank.state_dict(),
            "opt_g": state.opt_g.state_dict(),
            "opt_d": state.opt_d.state_dict(),
            "rng_state": state.rng.get_state(),
            "shuffle_rng_state": state.shuffle_rng.get_state(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> TrainState:
    payload = torch.load(Path(path), weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version}")
    raw_config = payload["config"]
    raw_config["aug_ops"] = tuple(raw_config["aug_ops"])
    config = TrainConfig(**raw_config)
    state = build_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.discriminator.load_state_dict(payload["discriminator"])
    state.bank = FeatureBank.from_state_dict(payload["bank"])
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.rng.set_state(payload["rng_state"])
    state.shuffle_rng.set_state(payload["shuffle_rng_state"])
    state.epoch = payload["epoch"]
    state.step = payload["step"]
    return state


_SCHEDULE_ONLY_FIELDS = {"total_epochs", "max_steps", "checkpoint_every", "grid_every"}


def _resume_compatible(saved: TrainConfig, requested: TrainConfig) -> bool:
    a, b = dataclasses.asdict(saved), dataclasses.asdict(requested)
    return all(a[k] == b[k] for k in a if k not in _SCHEDULE_ONLY_FIELDS)


def train(
    config: TrainConfig,
    dataset: ArrayDataset | None = None,
    out_dir: str | Path = "runs/train",
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the configured schedule and write checkpoints, metrics, and grids.

    Epochs below the effective warmup count run the conventional phase; the
    rest run the augmented phase. Deterministic for a fixed config and seed.
    """
    if dataset is None:
        dataset = load_dataset(config.dataset_spec())
    if dataset.resolution != config.resolution:
        raise DataError(
            f"dataset resolution {dataset.resolution} != configured {config.resolution}"
        )
    if dataset.channels != config.image_channels:
        raise DataError(
            f"dataset has {dataset.channels} channels, config expects {config.image_channels}"
        )
    if len(dataset) < config.batch_size:
        raise DataError(
            f"dataset size {len(dataset)} smaller than batch_size {config.batch_size}"
        )

    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    runconfig.write_config(config, out / "config.resolved")

    state = load_checkpoint(resume_from) if resume_from else build_state(config)
    if resume_from:
        if not _resume_compatible(state.config, config):
            raise ValueError(
                "resume checkpoint config differs from the requested config "
                "(only schedule-length fields may change)"
            )
        state.config = config

    metrics_path = out / "metrics.ndjson"
    done = False
    with open(metrics_path, "a") as metrics_file:
        for epoch in range(state.epoch, config.total_epochs):
            phase = phase_for_epoch(config, epoch)
            for batch in dataset.shuffled_batches(config.batch_size, state.shuffle_rng):
                metrics = train_step(state, batch, phase)
                metrics["epoch"] = epoch
                metrics_file.write(json.dumps(metrics) + "\n")
                state.step += 1
                if config.max_steps and state.step >= config.max_steps:
                    done = True
                    break
            state.epoch = epoch + 1
            if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                save_checkpoint(state, out / "checkpoints" / f"epoch_{state.epoch:04d}.pt")
            if config.grid_every and state.epoch % config.grid_every == 0:
                grid = generate_samples(
                    state.generator,
                    state.bank.snapshot(),
                    config.sample_grid_count,
                    config.seed + GRID_SEED_OFFSET,
                )
                save_grid(grid, out / "grids" / f"epoch_{state.epoch:04d}.png")
            if done:
                break

    checkpoint_path = save_checkpoint(state, out / "checkpoints" / "final.pt")
    final_images = generate_samples(
        state.generator,
        state.bank.snapshot(),
        config.sample_grid_count,
        config.seed + GRID_SEED_OFFSET,
    )
    final_grid_path = save_grid(final_images, out / "grids" / "final.png")
    return TrainResult(
        out_dir=out,
        checkpoint_path=checkpoint_path,
        metrics_path=metrics_path,
        final_grid_path=final_grid_path,
        epochs_run=state.epoch,
        steps_run=state.step,
    )
