"""Least-squares adversarial objectives, mix-consistency regularization, and
the weighted loss compositions for both networks.

The consistency terms regularize the discriminator only: constituent outputs
enter detached, so gradients reach discriminator parameters solely through
its outputs on the mixed image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

from .discriminator import DiscOutput
from .masks import BinaryMask, MixLabel, downsample_mask_majority, mix_pixel_targets


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 1.0  # pixel adversarial weight in the discriminator objective
    beta2: float = 1.0  # consistency weight in the discriminator objective
    beta_g: float = 1.0  # pixel weight in the generator objective
    feature_cons_weight: float = 0.1

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta_g", "feature_cons_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass
class ConsistencyTerms:
    image: Tensor
    pixel: Tensor

    @property
    def total(self) -> Tensor:
        return self.image + self.pixel


def adv_d_loss(real_out: DiscOutput, fake_out: DiscOutput) -> tuple[Tensor, Tensor]:
    """Least-squares discriminator terms: real toward 1, fake toward 0.

    Returns (image-level, pixel-level) scalars; fake outputs are expected to
    come from a detached generator sample.
    """
    l_img = ((real_out.img_score - 1.0) ** 2).mean() + (fake_out.img_score**2).mean()
    l_pix = ((real_out.pixel_map - 1.0) ** 2).mean() + (fake_out.pixel_map**2).mean()
    return l_img, l_pix


def adv_g_loss(fake_out: DiscOutput) -> tuple[Tensor, Tensor]:
    """Least-squares generator terms pushing both levels toward 1."""
    l_img = ((fake_out.img_score - 1.0) ** 2).mean()
    l_pix = ((fake_out.pixel_map - 1.0) ** 2).mean()
    return l_img, l_pix


def consistency_loss(
    mixed_out: DiscOutput,
    real_out: DiscOutput,
    fake_out: DiscOutput,
    mask: BinaryMask,
    label: MixLabel,
    include_pixel: bool = True,
) -> ConsistencyTerms:
    """Penalize discriminator outputs on the mix that stray from the mixed targets.

    Image level: squared error against the scalar mix label. Pixel level:
    squared error against the mask-mixed constituent pixel maps. Targets are
    detached; only ``mixed_out`` carries gradient.
    """
    if label.pixel_targets.values.shape != mask.values.shape or not torch.equal(
        label.pixel_targets.values, mask.values
    ):
        raise ValueError("label.pixel_targets does not match the provided mask")
    if mixed_out.img_score.shape[0] != mask.batch:
        raise ValueError("batch size mismatch between mixed outputs and mask")

    lam = label.lam.to(mixed_out.img_score.dtype)
    image_term = ((mixed_out.img_score - lam) ** 2).mean()
    if include_pixel:
        target = mix_pixel_targets(
            mask, real_out.pixel_map.detach(), fake_out.pixel_map.detach()
        )
        pixel_term = ((mixed_out.pixel_map - target) ** 2).mean()
    else:
        pixel_term = torch.zeros((), dtype=image_term.dtype)
    return ConsistencyTerms(image=image_term, pixel=pixel_term)


def feature_consistency_loss(
    mixed_features: dict[int, Tensor],
    real_features: dict[int, Tensor],
    fake_features: dict[int, Tensor],
    mask: BinaryMask,
) -> Tensor:
    """Masked squared feature matching between the mix pyramid and its constituents.

    Per level the mask is area-majority downsampled; locations covered by the
    real region are matched to real features and the rest to fake features.
    Constituent pyramids are detached targets.
    """
    if set(mixed_features) != set(real_features) or set(mixed_features) != set(fake_features):
        raise ValueError("feature pyramids must share the same resolution levels")
    total = None
    for res in sorted(mixed_features):
        f_mix = mixed_features[res]
        f_real = real_features[res].detach()
        f_fake = fake_features[res].detach()
        m = downsample_mask_majority(mask.values, f_mix.shape[2], f_mix.shape[3])
        m = m.to(f_mix.dtype)
        sq_real = ((f_mix - f_real) ** 2).sum(dim=1, keepdim=True)
        sq_fake = ((f_mix - f_fake) ** 2).sum(dim=1, keepdim=True)
        level = (m * sq_real + (1.0 - m) * sq_fake).mean()
        total = level if total is None else total + level
    if total is None:
        raise ValueError("feature pyramids are empty")
    return total


@dataclass
class DLossParts:
    img: Tensor
    pixel: Tensor
    cons: Tensor
    feature_cons: Tensor


@dataclass
class GLossParts:
    img: Tensor
    pixel: Tensor


def total_d_loss(parts: DLossParts, weights: LossWeights) -> Tensor:
    return parts.img + weights.beta1 * parts.pixel + weights.beta2 * (
        parts.cons + weights.feature_cons_weight * parts.feature_cons
    )


def total_g_loss(parts: GLossParts, weights: LossWeights) -> Tensor:
    return parts.img + weights.beta_g * parts.pixel
