"""Dataset ingestion: image directories and the procedural phantom set.

The phantom generator draws anatomical-slice-like grayscale images (dark
background, bright elliptical body, a few interior ellipses and rings, mild
noise) so the whole pipeline can be exercised without clinical data.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from .errors import DataError

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class DatasetSpec:
    source: str = "phantom"  # "phantom" or a directory path
    resolution: int = 64
    channel_mode: str = "grayscale"  # or "rgb"
    size: int = 512  # phantom only
    seed: int = 0

    def __post_init__(self):
        if self.channel_mode not in ("grayscale", "rgb"):
            raise ValueError(f"channel_mode must be grayscale or rgb, got {self.channel_mode}")
        if self.resolution < 16:
            raise ValueError(f"resolution must be >= 16, got {self.resolution}")


class ArrayDataset:
    """In-memory image dataset, values in [-1, 1], shape (N, C, R, R)."""

    def __init__(self, images: Tensor):
        if images.ndim != 4:
            raise ValueError("images must be (N, C, H, W)")
        self.images = images

    def __len__(self) -> int:
        return self.images.shape[0]

    def __getitem__(self, idx) -> Tensor:
        return self.images[idx]

    @property
    def resolution(self) -> int:
        return self.images.shape[2]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    def shuffled_batches(self, batch_size: int, rng: torch.Generator, drop_last: bool = True):
        perm = torch.randperm(len(self), generator=rng)
        end = len(self) - (len(self) % batch_size) if drop_last else len(self)
        for start in range(0, end, batch_size):
            idx = perm[start : start + batch_size]
            if len(idx) == 0:
                break
            yield self.images[idx]


def load_dataset(spec: DatasetSpec) -> ArrayDataset:
    if spec.source == "phantom":
        return phantom_dataset(spec.size, spec.resolution, spec.seed)
    return load_image_dir(spec.source, spec)


def load_image_dir(path: str | Path, spec: DatasetSpec) -> ArrayDataset:
    """Decode a directory of PNG/JPEG images into a normalized dataset.

    Images are center-cropped square, bilinear-resized, optionally converted
    to grayscale, and mapped linearly from [0, 255] to [-1, 1]. Iteration
    order is lexicographic by filename.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no PNG/JPEG files in {root}")

    arrays = []
    for f in files:
        try:
            with Image.open(f) as img:
                img = img.convert("L" if spec.channel_mode == "grayscale" else "RGB")
                side = min(img.size)
                left = (img.width - side) // 2
                top = (img.height - side) // 2
                img = img.crop((left, top, left + side, top + side))
                img = img.resize((spec.resolution, spec.resolution), Image.BILINEAR)
                arrays.append(np.asarray(img, dtype=np.float32))
        except (UnidentifiedImageError, OSError) as exc:
            warnings.warn(f"skipping undecodable image {f}: {exc}")
    if not arrays:
        raise DataError(f"all {len(files)} files in {root} failed to decode")

    stack = np.stack(arrays)  # (N, R, R) or (N, R, R, 3)
    if stack.ndim == 3:
        stack = stack[:, None, :, :]
    else:
        stack = stack.transpose(0, 3, 1, 2)
    images = torch.from_numpy(stack / 127.5 - 1.0).to(torch.float32)
    return ArrayDataset(images)


def phantom_dataset(n: int, resolution: int, seed: int = 0) -> ArrayDataset:
    """Procedural phantom images, fully determined by the seed."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    rng = np.random.Generator(np.random.PCG64(seed))
    images = np.empty((n, 1, resolution, resolution), dtype=np.float32)
    for i in range(n):
        images[i, 0] = _draw_phantom(resolution, rng)
    return ArrayDataset(torch.from_numpy(images))


def _ellipse_field(res: int, cx, cy, ax, ay, angle) -> np.ndarray:
    """Normalized elliptical distance: <1 inside, 1 on the boundary."""
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / ax
    v = (-s * dx + c * dy) / ay
    return np.sqrt(u * u + v * v)


def _soft_inside(dist: np.ndarray, edge: float) -> np.ndarray:
    return np.clip((1.0 - dist) / edge, 0.0, 1.0)


def _draw_phantom(res: int, rng: np.random.Generator) -> np.ndarray:
    img = np.full((res, res), -1.0)
    edge = 0.15  # soft boundary width in normalized ellipse-distance units

    cx = res / 2 + rng.uniform(-0.05, 0.05) * res
    cy = res / 2 + rng.uniform(-0.05, 0.05) * res
    ax = rng.uniform(0.28, 0.42) * res
    ay = rng.uniform(0.28, 0.42) * res
    body_angle = rng.uniform(0, np.pi)
    body_level = rng.uniform(0.15, 0.55)
    body_dist = _ellipse_field(res, cx, cy, ax, ay, body_angle)
    body = _soft_inside(body_dist, edge)
    img += (body_level + 1.0) * body

    for _ in range(rng.integers(2, 6)):
        r_frac = rng.uniform(0.0, 0.55)
        theta = rng.uniform(0, 2 * np.pi)
        icx = cx + r_frac * ax * np.cos(theta)
        icy = cy + r_frac * ay * np.sin(theta)
        iax = rng.uniform(0.05, 0.18) * res
        iay = rng.uniform(0.05, 0.18) * res
        iangle = rng.uniform(0, np.pi)
        delta = rng.uniform(-0.5, 0.6)
        dist = _ellipse_field(res, icx, icy, iax, iay, iangle)
        if rng.uniform() < 0.35:
            width = rng.uniform(0.15, 0.35)
            shape = np.clip(1.0 - np.abs(dist - 1.0) / width, 0.0, 1.0)
        else:
            shape = _soft_inside(dist, edge)
        img += delta * shape * body

    img += rng.normal(0.0, 0.03, size=(res, res))
    return np.clip(img, -1.0, 1.0).astype(np.float32)
