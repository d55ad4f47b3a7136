"""Frechet-distance evaluation over pluggable image embeddings.

The default desk extractor is a small fixed-seed random convolutional network
with global average pooling (64 features); any callable mapping an image
batch to (N, d) features can be plugged in instead for comparability with
external pipelines.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from .errors import NumericalError

DEFAULT_FEATURE_DIM = 64


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian fit of an embedded image set."""

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        if self.mean.ndim != 1:
            raise ValueError("mean must be a vector")
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {self.covariance.shape}")
        asym = np.abs(self.covariance - self.covariance.T).max() if d else 0.0
        if asym > 1e-8:
            raise ValueError(f"covariance asymmetric beyond tolerance: {asym:.3e}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


class RandomConvExtractor(nn.Module):
    """Fixed-seed random conv stack with global average pooling."""

    def __init__(self, in_channels: int = 1, feature_dim: int = DEFAULT_FEATURE_DIM, seed: int = 1234):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(in_channels, 16, 3, 2, 1),
                nn.LeakyReLU(0.2),
                nn.Conv2d(16, 32, 3, 2, 1),
                nn.LeakyReLU(0.2),
                nn.Conv2d(32, feature_dim, 3, 2, 1),
                nn.LeakyReLU(0.2),
            )
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    nn.init.kaiming_normal_(m.weight, a=0.2, nonlinearity="leaky_relu")
                    nn.init.zeros_(m.bias)
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, images: Tensor) -> Tensor:
        return self.net(images).mean(dim=(2, 3))


def default_extractor(in_channels: int = 1, seed: int = 1234) -> RandomConvExtractor:
    return RandomConvExtractor(in_channels=in_channels, seed=seed)


def embed(images: Tensor, extractor: nn.Module, batch_size: int = 128) -> np.ndarray:
    """Embed an image batch to float64 features of shape (N, d)."""
    if images.ndim != 4:
        raise ValueError(f"images must be (N, C, H, W), got {tuple(images.shape)}")
    expected = getattr(extractor, "in_channels", None)
    if expected is not None and images.shape[1] != expected:
        raise ValueError(f"extractor expects {expected} channels, got {images.shape[1]}")
    chunks = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            feats = extractor(images[start : start + batch_size])
            if feats.ndim != 2:
                raise ValueError("extractor must return (N, d) features")
            chunks.append(feats.to(torch.float64).cpu().numpy())
    return np.concatenate(chunks, axis=0)


def compute_stats(features: np.ndarray) -> FeatureStats:
    """Mean and unbiased covariance of a feature matrix."""
    if features.ndim != 2:
        raise ValueError("features must be (N, d)")
    n, d = features.shape
    if n < 2:
        raise ValueError("need at least 2 samples for covariance")
    if n < d:
        warnings.warn(f"sample count {n} below feature dim {d}; covariance is rank-deficient")
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    cov = np.atleast_2d(cov)
    return FeatureStats(mean=mean, covariance=cov, sample_count=n)


def _sqrtm_psd(cov: np.ndarray, label: str) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clipping negatives at 0."""
    vals, vecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(vals).max())) if vals.size else 1.0
    if vals.min() < -1e-8 * scale:
        raise NumericalError(
            f"{label} covariance not PSD: min eigenvalue {vals.min():.3e}, "
            f"max eigenvalue {vals.max():.3e}"
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    sqrt_a = _sqrtm_psd(cov_a, "first")
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh(inner)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between two Gaussian fits.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the cross term is
    evaluated in both orders and averaged, making the result symmetric by
    construction.
    """
    if a.dim != b.dim:
        raise ValueError(f"feature dims differ: {a.dim} vs {b.dim}")
    mean_term = float(((a.mean - b.mean) ** 2).sum())
    cross = 0.5 * (_trace_sqrt_product(a.covariance, b.covariance)
                   + _trace_sqrt_product(b.covariance, a.covariance))
    fid = mean_term + float(np.trace(a.covariance)) + float(np.trace(b.covariance)) - 2.0 * cross
    return fid


def fid_between(real_images: Tensor, fake_images: Tensor, extractor: nn.Module) -> float:
    """Convenience: embed both sets and return their Frechet distance."""
    stats_r = compute_stats(embed(real_images, extractor))
    stats_f = compute_stats(embed(fake_images, extractor))
    return frechet_distance(stats_r, stats_f)


def eval_run(
    checkpoint_path,
    dataset,
    extractor: nn.Module | None = None,
    sample_count: int | None = None,
    seed: int = 0,
    use_bank: bool = True,
    out_dir=None,
) -> dict:
    """Score a checkpointed generator against a dataset.

    Generates ``sample_count`` images (stored bank or zero bank), embeds them
    together with an equal number of real images, and reports the Frechet
    distance. Writes a JSON report and a sample grid when ``out_dir`` is set.
    """
    from .training import generate_samples, load_checkpoint
    from .viz import save_grid

    state = load_checkpoint(checkpoint_path)
    count = sample_count if sample_count is not None else min(len(dataset), 512)
    if count > len(dataset):
        raise ValueError(
            f"sample_count {count} exceeds dataset size {len(dataset)}; "
            "real and generated sets must be equally sized"
        )
    if extractor is None:
        extractor = default_extractor(in_channels=dataset.channels)

    bank_view = state.bank.snapshot() if use_bank else {}
    fake = generate_samples(state.generator, bank_view, count, seed)

    if count == len(dataset):
        real = dataset.images
    else:
        idx = torch.randperm(len(dataset), generator=torch.Generator().manual_seed(seed))[:count]
        real = dataset.images[idx]

    fid = frechet_distance(
        compute_stats(embed(real, extractor)), compute_stats(embed(fake, extractor))
    )
    report = {
        "fid": fid,
        "sample_count": count,
        "seed": seed,
        "use_bank": use_bank,
        "checkpoint": str(checkpoint_path),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        grid_path = save_grid(fake[: min(64, count)], out / "eval_samples.png")
        report["grid_path"] = str(grid_path)
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
