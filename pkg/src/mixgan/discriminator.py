"""Hierarchical discriminator: an image-level downsampling branch scoring each
image, and a channel-thinning pixel branch scoring every pixel at input
resolution. The branches are decoupled by default; an optional single shared
stem can be enabled. Image-branch activations form the feature pyramid used
for the reverse skip connection and feature consistency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch import Tensor

MAX_CHANNELS = 512


@dataclass(frozen=True)
class DiscriminatorConfig:
    resolution: int = 64
    in_channels: int = 1
    base_channels: int = 64
    pixel_channels: int = 64
    shared_stem: int = 0  # 0 = fully decoupled branches, 1 = one shared conv
    spectral_norm: bool = False

    def __post_init__(self):
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        if self.shared_stem not in (0, 1):
            raise ValueError("shared_stem must be 0 or 1")

    @property
    def n_down(self) -> int:
        # four stride-2 layers when the input is large enough to survive them
        return min(4, int(math.log2(self.resolution)))


@dataclass
class DiscOutput:
    img_score: Tensor  # (B,)
    pixel_map: Tensor  # (B, 1, H, W)
    features: dict[int, Tensor] | None = None


def _sn(conv: nn.Conv2d, enabled: bool) -> nn.Module:
    return nn.utils.spectral_norm(conv) if enabled else conv


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        sn = config.spectral_norm
        in_ch = config.in_channels

        if config.shared_stem:
            self.stem = nn.Sequential(
                _sn(nn.Conv2d(in_ch, config.base_channels, 3, 1, 1), sn),
                nn.LeakyReLU(0.2, inplace=True),
            )
            branch_in = config.base_channels
        else:
            self.stem = None
            branch_in = in_ch

        # image branch: stride-2 convs, instance norm away from first layer
        # and 1x1 maps, then a pooled 1-unit head
        self.img_layers = nn.ModuleList()
        self.img_resolutions = []
        ch, res = branch_in, config.resolution
        for k in range(config.n_down):
            out_ch = min(config.base_channels * 2**k, MAX_CHANNELS)
            res //= 2
            use_norm = k > 0 and res >= 2
            layers: list[nn.Module] = [_sn(nn.Conv2d(ch, out_ch, 4, 2, 1, bias=not use_norm), sn)]
            if use_norm:
                layers.append(nn.InstanceNorm2d(out_ch, affine=True))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            self.img_layers.append(nn.Sequential(*layers))
            self.img_resolutions.append(res)
            ch = out_ch
        self.img_head = _sn(nn.Conv2d(ch, 1, 1), sn)

        pc = config.pixel_channels
        self.pixel_branch = nn.Sequential(
            _sn(nn.Conv2d(branch_in, pc, 3, 1, 1), sn),
            nn.LeakyReLU(0.2, inplace=True),
            _sn(nn.Conv2d(pc, pc // 2, 3, 1, 1), sn),
            nn.LeakyReLU(0.2, inplace=True),
            _sn(nn.Conv2d(pc // 2, 1, 3, 1, 1), sn),
        )

    def feature_channels(self) -> dict[int, int]:
        """Image-branch pyramid channels keyed by resolution."""
        out = {}
        res = self.config.resolution
        for k in range(self.config.n_down):
            res //= 2
            out[res] = min(self.config.base_channels * 2**k, MAX_CHANNELS)
        return out

    def forward(self, images: Tensor, capture_features: bool = False) -> DiscOutput:
        cfg = self.config
        if images.ndim != 4 or images.shape[1] != cfg.in_channels:
            raise ValueError(
                f"expected (B, {cfg.in_channels}, {cfg.resolution}, {cfg.resolution}) images, "
                f"got {tuple(images.shape)}"
            )
        if images.shape[2] != cfg.resolution or images.shape[3] != cfg.resolution:
            raise ValueError(
                f"resolution mismatch: configured {cfg.resolution}, got "
                f"{images.shape[2]}x{images.shape[3]}"
            )

        x = self.stem(images) if self.stem is not None else images
        pixel_map = self.pixel_branch(x)

        feats: dict[int, Tensor] = {}
        h = x
        for layer, res in zip(self.img_layers, self.img_resolutions):
            h = layer(h)
            if capture_features:
                feats[res] = h
        img_score = self.img_head(h.mean(dim=(2, 3), keepdim=True)).reshape(-1)

        return DiscOutput(
            img_score=img_score,
            pixel_map=pixel_map,
            features=feats if capture_features else None,
        )

    def image_branch_parameters(self):
        yield from self.img_layers.parameters()
        yield from self.img_head.parameters()

    def pixel_branch_parameters(self):
        yield from self.pixel_branch.parameters()
