"""Binary cut masks, saliency maps, and the mixing/label algebra.

A mask value of 1 selects the real image, 0 the generated one, so the
composed image is ``M * real + (1 - M) * fake`` and the scalar mix label
measures the real-content fraction ("authenticity") of the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor


@dataclass(frozen=True)
class BinaryMask:
    """Per-image {0,1} spatial mask of shape (B, 1, H, W).

    ``area_ratio`` is the per-image fraction of 1-entries (the area-based
    mix ratio lambda0), kept in float64.
    """

    values: Tensor
    area_ratio: Tensor

    @classmethod
    def from_values(cls, values: Tensor) -> "BinaryMask":
        if values.ndim != 4 or values.shape[1] != 1:
            raise ValueError(f"mask must have shape (B, 1, H, W), got {tuple(values.shape)}")
        if not torch.all((values == 0) | (values == 1)):
            raise ValueError("mask entries must be exactly 0 or 1")
        ratio = values.to(torch.float64).mean(dim=(1, 2, 3))
        return cls(values=values, area_ratio=ratio)

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def spatial(self) -> tuple[int, int]:
        return self.values.shape[2], self.values.shape[3]

    def complement(self) -> "BinaryMask":
        return BinaryMask.from_values(1.0 - self.values)


@dataclass(frozen=True)
class SaliencyMap:
    """Nonnegative per-pixel weights of shape (B, 1, H, W), summing to 1 per image."""

    values: Tensor

    @classmethod
    def from_values(cls, values: Tensor, tol: float = 1e-6) -> "SaliencyMap":
        if values.ndim != 4 or values.shape[1] != 1:
            raise ValueError(f"saliency must have shape (B, 1, H, W), got {tuple(values.shape)}")
        if torch.any(values < 0):
            raise ValueError("saliency entries must be nonnegative")
        sums = values.sum(dim=(1, 2, 3))
        if torch.any((sums - 1.0).abs() > tol):
            raise ValueError("saliency must sum to 1 per image")
        return cls(values=values)

    @classmethod
    def uniform(cls, batch: int, height: int, width: int, dtype=torch.float32) -> "SaliencyMap":
        v = torch.full((batch, 1, height, width), 1.0 / (height * width), dtype=dtype)
        return cls(values=v)


@dataclass(frozen=True)
class MixLabel:
    """Scalar mix label per image plus the pixel-level target mask it came from."""

    lam: Tensor
    pixel_targets: BinaryMask


def sample_cut_mask(
    batch: int,
    height: int,
    width: int,
    ratio_bounds: tuple[float, float] = (0.2, 0.8),
    rng: torch.Generator | None = None,
) -> BinaryMask:
    """Sample one axis-aligned rectangle of 1s per image.

    The rectangle's area fraction is drawn uniformly from ``ratio_bounds``;
    quantization to integer side lengths keeps the realized area within about
    half a pixel row plus half a pixel column of the drawn target. The
    rectangle's aspect follows the image aspect (scaled by sqrt of the ratio);
    its position is uniform over valid offsets.
    """
    if height < 4 or width < 4:
        raise ValueError(f"mask dims must be >= 4, got {height}x{width}")
    lo, hi = ratio_bounds
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"ratio_bounds must satisfy 0 <= lo <= hi <= 1, got {ratio_bounds}")

    ratios = torch.rand(batch, generator=rng, dtype=torch.float64) * (hi - lo) + lo
    values = torch.zeros(batch, 1, height, width)
    for b in range(batch):
        r = float(ratios[b])
        area = r * height * width
        if area < 0.5:
            continue
        h = min(height, max(1, round(math.sqrt(area * height / width))))
        w = min(width, max(1, round(area / h)))
        if h * w >= height * width:
            h, w = height, width
        top = int(torch.randint(0, height - h + 1, (1,), generator=rng))
        left = int(torch.randint(0, width - w + 1, (1,), generator=rng))
        values[b, 0, top : top + h, left : left + w] = 1.0
    return BinaryMask.from_values(values)


def attnmix_compose(real: Tensor, fake: Tensor, mask: BinaryMask) -> Tensor:
    """Compose ``M * real + (1 - M) * fake``, mask broadcast over channels."""
    if real.shape != fake.shape:
        raise ValueError(f"real/fake shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    m = mask.values
    if real.ndim != 4 or m.shape[0] != real.shape[0] or m.shape[2:] != real.shape[2:]:
        raise ValueError(
            f"mask shape {tuple(m.shape)} incompatible with images {tuple(real.shape)}"
        )
    m = m.to(real.dtype)
    return m * real + (1.0 - m) * fake


def attention_to_saliency(raw_attention: Tensor, target_h: int, target_w: int) -> SaliencyMap:
    """Turn exported self-attention weights into a normalized saliency map.

    Accepts a per-image key-importance vector (B, P) or a query-by-key matrix
    (B, Q, P). Matrices are reduced over the query axis by summation. The P
    positions must form a square grid; the grid is upsampled to the target
    size by nearest neighbor and normalized to sum 1 per image.
    """
    if raw_attention.ndim == 3:
        key_mass = raw_attention.sum(dim=1)
    elif raw_attention.ndim == 2:
        key_mass = raw_attention
    else:
        raise ValueError(f"attention must be (B, P) or (B, Q, P), got {raw_attention.ndim} dims")
    if torch.any(key_mass < 0):
        raise ValueError("attention weights must be nonnegative")

    batch, positions = key_mass.shape
    grid = math.isqrt(positions)
    if grid * grid != positions:
        raise RuntimeError(f"attention positions {positions} do not form a square grid")

    sal = key_mass.reshape(batch, 1, grid, grid)
    if (grid, grid) != (target_h, target_w):
        sal = F.interpolate(sal, size=(target_h, target_w), mode="nearest")
    totals = sal.sum(dim=(1, 2, 3), keepdim=True)
    if torch.any(totals == 0):
        raise ValueError("attention mass is zero for at least one image")
    return SaliencyMap(values=sal / totals)


def attention_weighted_ratio(mask: BinaryMask, saliency: SaliencyMap) -> Tensor:
    """Saliency mass under the mask divided by total saliency mass, per image.

    Returned in float64; reductions run in float64 so the ratio is monotone in
    mask growth to well below test tolerances.
    """
    m = mask.values
    a = saliency.values
    if m.shape != a.shape:
        raise ValueError(f"mask/saliency shape mismatch: {tuple(m.shape)} vs {tuple(a.shape)}")
    a64 = a.to(torch.float64)
    m64 = m.to(torch.float64)
    masked = (m64 * a64).sum(dim=(1, 2, 3))
    total = (m64 * a64 + (1.0 - m64) * a64).sum(dim=(1, 2, 3))
    if torch.any(total == 0):
        raise ValueError("saliency sums to zero; ratio undefined")
    return masked / total


def mix_label(lambda0: Tensor | float, lambda1: Tensor | float, alpha: float = 0.5) -> Tensor:
    """Scalar mix label alpha * (lambda0 + lambda1), clamped to [0, 1]."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    l0 = torch.as_tensor(lambda0, dtype=torch.float64)
    l1 = torch.as_tensor(lambda1, dtype=torch.float64)
    if torch.any(l0 < 0) or torch.any(l0 > 1) or torch.any(l1 < 0) or torch.any(l1 > 1):
        raise ValueError("lambda0 and lambda1 must lie in [0, 1]")
    return torch.clamp(alpha * (l0 + l1), 0.0, 1.0)


def make_mix_label(mask: BinaryMask, saliency: SaliencyMap, alpha: float = 0.5) -> MixLabel:
    """Full label allocation for a mask: area ratio plus saliency ratio."""
    lam1 = attention_weighted_ratio(mask, saliency)
    lam = mix_label(mask.area_ratio, lam1, alpha)
    return MixLabel(lam=lam, pixel_targets=mask)


def downsample_mask_majority(mask_values: Tensor, target_h: int, target_w: int) -> Tensor:
    """Area-majority downsample of a {0,1} mask; cells at least half covered become 1."""
    h, w = mask_values.shape[2], mask_values.shape[3]
    if (h, w) == (target_h, target_w):
        return mask_values
    if h % target_h != 0 or w % target_w != 0:
        raise ValueError(
            f"mask {h}x{w} does not divide evenly into target {target_h}x{target_w}"
        )
    pooled = F.avg_pool2d(mask_values, kernel_size=(h // target_h, w // target_w))
    return (pooled >= 0.5).to(mask_values.dtype)


def mix_pixel_targets(mask: BinaryMask, per_pixel_real: Tensor, per_pixel_fake: Tensor) -> Tensor:
    """Mix two per-pixel maps with the mask: M * real + (1 - M) * fake.

    The mask is area-majority downsampled if the maps live at a coarser
    resolution than the mask.
    """
    if per_pixel_real.shape != per_pixel_fake.shape:
        raise ValueError(
            f"pixel map shape mismatch: {tuple(per_pixel_real.shape)} vs {tuple(per_pixel_fake.shape)}"
        )
    m = mask.values
    if per_pixel_real.shape[0] != m.shape[0]:
        raise ValueError("batch size mismatch between mask and pixel maps")
    th, tw = per_pixel_real.shape[2], per_pixel_real.shape[3]
    m = downsample_mask_majority(m, th, tw).to(per_pixel_real.dtype)
    return m * per_pixel_real + (1.0 - m) * per_pixel_fake
