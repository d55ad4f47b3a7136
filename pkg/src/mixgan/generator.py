"""Latent-to-image generator: transposed-conv upsampling stack with one
self-attention layer whose attention map is exported, plus fusion sockets that
splice discriminator feature-bank entries into matching resolutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

MAX_CHANNELS = 512


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 100
    base_channels: int = 64
    resolution: int = 64
    attention_resolution: int = 0  # 0 selects resolution // 2
    out_channels: int = 1
    skip_fusion_enabled: bool = True
    skip_resolutions: tuple[int, ...] = ()
    # channels of incoming bank features per skip resolution
    skip_channels: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        attn = self.attention_resolution or r // 2
        if r % attn != 0:
            raise ValueError(f"attention_resolution {attn} must divide resolution {r}")
        path = self.feature_resolutions()
        if attn not in path:
            raise ValueError(f"attention_resolution {attn} not on the upsampling path {path}")
        for s in self.skip_resolutions:
            if s not in path:
                raise ValueError(f"skip resolution {s} not on the upsampling path {path}")
            if s not in self.skip_channels:
                raise ValueError(f"skip resolution {s} missing from skip_channels")

    def feature_resolutions(self) -> tuple[int, ...]:
        res, out = 4, [4]
        while res < self.resolution:
            res *= 2
            out.append(res)
        return tuple(out)

    @property
    def attn_resolution(self) -> int:
        return self.attention_resolution or self.resolution // 2


@dataclass
class GeneratorOutput:
    images: Tensor
    attention: Tensor  # (B, P, P) rows softmax-normalized over keys


def sample_latent(batch: int, latent_dim: int, rng: torch.Generator | None = None) -> Tensor:
    """I.i.d. uniform latent codes on [-1, 1], shape (batch, latent_dim)."""
    if batch < 1 or latent_dim < 1:
        raise ValueError("batch and latent_dim must be >= 1")
    return torch.rand(batch, latent_dim, generator=rng) * 2.0 - 1.0


class SelfAttention2d(nn.Module):
    """SAGAN-style self-attention over spatial positions.

    Returns the attended feature map and the (B, P, P) attention matrix,
    softmax over the key axis.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(1, channels // 8)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        b, c, h, w = x.shape
        p = h * w
        q = self.query(x).flatten(2).transpose(1, 2)  # (B, P, C')
        k = self.key(x).flatten(2)  # (B, C', P)
        attn = torch.softmax(torch.bmm(q, k), dim=-1)  # (B, P_query, P_key)
        v = self.value(x).flatten(2)  # (B, C, P)
        out = torch.bmm(v, attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.gamma * out, attn


class FusionSocket(nn.Module):
    """Concatenate bank features with generator activations, project back with 1x1 conv."""

    def __init__(self, channels: int, bank_channels: int):
        super().__init__()
        self.bank_channels = bank_channels
        self.proj = nn.Conv2d(channels + bank_channels, channels, 1)

    def forward(self, x: Tensor, bank_feat: Tensor | None) -> Tensor:
        b, _, h, w = x.shape
        if bank_feat is None:
            bank_feat = x.new_zeros(b, self.bank_channels, h, w)
        else:
            if bank_feat.shape[1] != self.bank_channels or bank_feat.shape[2:] != (h, w):
                raise ValueError(
                    f"bank feature shape {tuple(bank_feat.shape)} does not match socket "
                    f"({self.bank_channels}, {h}, {w})"
                )
            if bank_feat.shape[0] == 1 and b != 1:
                bank_feat = bank_feat.expand(b, -1, -1, -1)
        return self.proj(torch.cat([x, bank_feat], dim=1))


class Generator(nn.Module):
    """DCGAN-family upsampler: 4x4 stem, stride-2 transposed convs, tanh output."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        n_up = int(math.log2(config.resolution // 4))
        chans = [min(config.base_channels * 2**(n_up - i), MAX_CHANNELS) for i in range(n_up + 1)]

        self.stem = nn.Sequential(
            nn.ConvTranspose2d(config.latent_dim, chans[0], 4, 1, 0, bias=False),
            nn.BatchNorm2d(chans[0]),
            nn.ReLU(inplace=True),
        )
        self.blocks = nn.ModuleList()
        self.block_resolutions = []
        res = 4
        for i in range(n_up):
            res *= 2
            self.blocks.append(
                nn.Sequential(
                    nn.ConvTranspose2d(chans[i], chans[i + 1], 4, 2, 1, bias=False),
                    nn.BatchNorm2d(chans[i + 1]),
                    nn.ReLU(inplace=True),
                )
            )
            self.block_resolutions.append(res)

        self.channels_at = {4: chans[0]}
        for r, c in zip(self.block_resolutions, chans[1:]):
            self.channels_at[r] = c

        self.sockets = nn.ModuleDict(
            {
                str(r): FusionSocket(self.channels_at[r], config.skip_channels[r])
                for r in config.skip_resolutions
            }
        )
        self.attention = SelfAttention2d(self.channels_at[config.attn_resolution])
        self.to_image = nn.Sequential(
            nn.Conv2d(chans[-1], config.out_channels, 3, 1, 1),
            nn.Tanh(),
        )

    def forward(self, z: Tensor, bank: dict[int, Tensor] | None = None) -> GeneratorOutput:
        cfg = self.config
        if z.ndim != 2 or z.shape[1] != cfg.latent_dim:
            raise ValueError(f"latent must be (B, {cfg.latent_dim}), got {tuple(z.shape)}")
        use_bank = bank if (cfg.skip_fusion_enabled and bank is not None) else {}

        x = self.stem(z.reshape(z.shape[0], cfg.latent_dim, 1, 1))
        x, attention = self._maybe_attend_and_fuse(x, 4, use_bank)
        for block, res in zip(self.blocks, self.block_resolutions):
            x = block(x)
            x, a = self._maybe_attend_and_fuse(x, res, use_bank)
            if a is not None:
                attention = a
        images = self.to_image(x)
        return GeneratorOutput(images=images, attention=attention)

    def _maybe_attend_and_fuse(
        self, x: Tensor, res: int, bank: dict[int, Tensor]
    ) -> tuple[Tensor, Tensor | None]:
        if str(res) in self.sockets:
            x = self.sockets[str(res)](x, bank.get(res))
        attention = None
        if res == self.config.attn_resolution:
            x, attention = self.attention(x)
        return x, attention
