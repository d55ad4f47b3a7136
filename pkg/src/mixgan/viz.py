"""Image grid rendering for sample inspection and mix visualization."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor


def to_uint8(images: Tensor) -> np.ndarray:
    """Map [-1, 1] images (B, C, H, W) to uint8 (B, H, W, C)."""
    arr = images.detach().clamp(-1.0, 1.0).cpu().numpy()
    arr = ((arr + 1.0) * 127.5).round().astype(np.uint8)
    return arr.transpose(0, 2, 3, 1)


def tile_grid(images: Tensor, columns: int | None = None, pad: int = 2) -> np.ndarray:
    """Tile a batch into one uint8 grid image (H, W, C)."""
    batch = images.shape[0]
    cols = columns or max(1, int(math.ceil(math.sqrt(batch))))
    rows = int(math.ceil(batch / cols))
    tiles = to_uint8(images)
    _, h, w, c = tiles.shape
    canvas = np.zeros((rows * (h + pad) - pad, cols * (w + pad) - pad, c), dtype=np.uint8)
    for i in range(batch):
        r, col = divmod(i, cols)
        canvas[r * (h + pad) : r * (h + pad) + h, col * (w + pad) : col * (w + pad) + w] = tiles[i]
    return canvas


def save_grid(images: Tensor, path: str | Path, columns: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = tile_grid(images, columns=columns)
    if grid.shape[-1] == 1:
        Image.fromarray(grid[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(grid, mode="RGB").save(path)
    return path


def mask_saliency_panel(mask_values: Tensor, saliency_values: Tensor) -> Tensor:
    """Overlay a binary mask with a saliency heat map as one [-1, 1] image batch.

    The mask contributes a +/-0.5 base level (real region bright), saliency the
    remaining dynamic range, so both the cut region and the weight allocation
    are visible in a single grayscale panel.
    """
    sal = saliency_values / saliency_values.amax(dim=(2, 3), keepdim=True).clamp_min(1e-12)
    panel = (mask_values - 0.5) + sal
    return panel.clamp(-1.0, 1.0)
