"""Differentiable, range-preserving image augmentation.

Every op maps [-1, 1] images back into [-1, 1] and is differentiable with
respect to the input pixels almost everywhere (translation and cutout are
piecewise linear). Random parameters are drawn per sample from an explicit
generator so a fixed seed reproduces the exact transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor

KNOWN_OPS = ("brightness", "contrast", "translation", "cutout")


@dataclass(frozen=True)
class AugPolicy:
    """Ordered augmentation ops with their magnitude bounds."""

    ops: tuple[str, ...] = ("brightness", "translation", "cutout")
    brightness_range: tuple[float, float] = (-0.25, 0.25)
    contrast_range: tuple[float, float] = (0.75, 1.25)
    translation_frac: float = 0.125
    cutout_frac: float = 0.25

    def __post_init__(self):
        for op in self.ops:
            if op not in KNOWN_OPS:
                raise ValueError(f"unknown augmentation op {op!r}, known: {KNOWN_OPS}")

    @classmethod
    def disabled(cls) -> "AugPolicy":
        return cls(ops=())


def _uniform(lo: float, hi: float, batch: int, rng: torch.Generator | None, dtype) -> Tensor:
    return torch.rand(batch, 1, 1, 1, generator=rng, dtype=dtype) * (hi - lo) + lo


def _brightness(x: Tensor, policy: AugPolicy, rng) -> Tensor:
    lo, hi = policy.brightness_range
    return x + _uniform(lo, hi, x.shape[0], rng, x.dtype)


def _contrast(x: Tensor, policy: AugPolicy, rng) -> Tensor:
    lo, hi = policy.contrast_range
    scale = _uniform(lo, hi, x.shape[0], rng, x.dtype)
    mean = x.mean(dim=(1, 2, 3), keepdim=True)
    return (x - mean) * scale + mean


def _translation(x: Tensor, policy: AugPolicy, rng) -> Tensor:
    b, _, h, w = x.shape
    max_dy = int(h * policy.translation_frac + 0.5)
    max_dx = int(w * policy.translation_frac + 0.5)
    dy = torch.randint(-max_dy, max_dy + 1, (b,), generator=rng)
    dx = torch.randint(-max_dx, max_dx + 1, (b,), generator=rng)
    pad = max(max_dy, max_dx)
    if pad == 0:
        return x
    padded = F.pad(x, (pad, pad, pad, pad))
    shifted = [
        padded[i, :, pad - int(dy[i]) : pad - int(dy[i]) + h, pad - int(dx[i]) : pad - int(dx[i]) + w]
        for i in range(b)
    ]
    return torch.stack(shifted, dim=0)


def _cutout(x: Tensor, policy: AugPolicy, rng) -> Tensor:
    b, _, h, w = x.shape
    size = int(min(h, w) * policy.cutout_frac + 0.5)
    if size == 0:
        return x
    cy = torch.randint(0, h, (b,), generator=rng)
    cx = torch.randint(0, w, (b,), generator=rng)
    keep = torch.ones(b, 1, h, w, dtype=x.dtype)
    for i in range(b):
        top = max(0, int(cy[i]) - size // 2)
        left = max(0, int(cx[i]) - size // 2)
        keep[i, 0, top : top + size, left : left + size] = 0.0
    return x * keep


_OPS = {
    "brightness": _brightness,
    "contrast": _contrast,
    "translation": _translation,
    "cutout": _cutout,
}


def diff_augment(images: Tensor, policy: AugPolicy, rng: torch.Generator | None = None) -> Tensor:
    """Apply the policy's ops in order with fresh per-sample parameters.

    An empty policy is the identity. Each op's output is clamped back to
    [-1, 1]; gradients flow through all ops (clamp boundaries aside).
    """
    if images.ndim != 4:
        raise ValueError(f"images must be (B, C, H, W), got {tuple(images.shape)}")
    if not policy.ops:
        return images
    x = images
    for op in policy.ops:
        x = _OPS[op](x, policy, rng)
        x = torch.clamp(x, -1.0, 1.0)
    return x
