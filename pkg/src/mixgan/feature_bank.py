"""Exponentially averaged store of real-path discriminator features.

The bank is the persistence mechanism behind the reverse skip connection:
the training loop pushes batch-mean real features in, the generator reads a
detached snapshot out. An empty bank is valid and yields zero injection.
"""

from __future__ import annotations

import torch
from torch import Tensor


class FeatureBank:
    """Single-writer EMA of feature maps keyed by resolution.

    Entries are stored detached with a leading batch axis of 1; snapshot()
    returns cloned tensors so later updates never alias into a reader.
    """

    def __init__(self, resolutions: tuple[int, ...], momentum: float = 0.1):
        if not 0.0 < momentum <= 1.0:
            raise ValueError(f"momentum must be in (0, 1], got {momentum}")
        self.resolutions = tuple(sorted(resolutions))
        self.momentum = momentum
        self.step_count = 0
        self.entries: dict[int, Tensor] = {}

    def update(self, real_features: dict[int, Tensor], momentum: float | None = None) -> None:
        m = self.momentum if momentum is None else momentum
        if not 0.0 < m <= 1.0:
            raise ValueError(f"momentum must be in (0, 1], got {m}")
        missing = [r for r in self.resolutions if r not in real_features]
        if missing:
            raise ValueError(f"features missing resolutions {missing}")
        for res in self.resolutions:
            feat = real_features[res].detach().to(torch.float32)
            mean = feat.mean(dim=0, keepdim=True)
            if res in self.entries:
                self.entries[res] = (1.0 - m) * self.entries[res] + m * mean
            else:
                self.entries[res] = m * mean
            if not torch.isfinite(self.entries[res]).all():
                raise ValueError(f"non-finite bank entry at resolution {res}")
        self.step_count += 1

    def snapshot(self) -> dict[int, Tensor]:
        """Read-only view for generation; absent resolutions are simply missing
        (the generator substitutes zeros)."""
        return {res: t.clone() for res, t in self.entries.items()}

    def state_dict(self) -> dict:
        return {
            "resolutions": self.resolutions,
            "momentum": self.momentum,
            "step_count": self.step_count,
            "entries": {res: t.clone() for res, t in self.entries.items()},
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "FeatureBank":
        bank = cls(tuple(state["resolutions"]), state["momentum"])
        bank.step_count = state["step_count"]
        bank.entries = {int(res): t.clone() for res, t in state["entries"].items()}
        return bank
