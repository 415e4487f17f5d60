"""Image-space augmentations of grid sequences: crop, rotate, noise, blur.

Spatial parameters (crop window, angle) are drawn once per call and shared
by every frame so the sequence stays temporally aligned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from .raster import GridConfigError, GridSequence


@dataclass(frozen=True)
class BaseAugConfig:
    crop_size: tuple[int, int] = (80, 80)
    rotation_range: tuple[float, float] = (-10.0, 10.0)
    noise_sigma: float = 0.02
    blur_sigma: float = 1.0
    blur_sigma_min: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.crop_size) < 1:
            raise GridConfigError("crop size must be positive")
        if self.noise_sigma < 0 or self.blur_sigma < 0 or self.blur_sigma_min < 0:
            raise GridConfigError("sigmas must be >= 0")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise GridConfigError("rotation range must be (low, high)")

    @classmethod
    def identity(cls, shape: tuple[int, int]) -> "BaseAugConfig":
        return cls(crop_size=tuple(shape), rotation_range=(0.0, 0.0), noise_sigma=0.0, blur_sigma=0.0)


def _hwc(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(data, 0, -1))


def _chw(data: np.ndarray, channels: int) -> np.ndarray:
    if data.ndim == 2:
        data = data[:, :, None]
    return np.ascontiguousarray(np.moveaxis(data, -1, 0))


# --- array level -------------------------------------------------------------

def crop_resize(data: np.ndarray, top: int, left: int, size: tuple[int, int]) -> np.ndarray:
    """Crop every frame of a (C, H, W) array at (top, left) and resize back bilinearly."""
    c, h, w = data.shape
    ch, cw = size
    if ch > h or cw > w:
        raise GridConfigError(f"crop {size} larger than grid {(h, w)}")
    if (ch, cw) == (h, w):
        return data.copy()
    window = _hwc(data[:, top:top + ch, left:left + cw])
    out = cv2.resize(window, (w, h), interpolation=cv2.INTER_LINEAR)
    return _chw(out, c)


def rotate(data: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate every frame about the grid centre; outside samples are 0; clamped to [0, 1]."""
    if angle_deg == 0:
        return data.copy()
    c, h, w = data.shape
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), float(angle_deg), 1.0)
    out = cv2.warpAffine(_hwc(data), m, (w, h), flags=cv2.INTER_LINEAR,
                         borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    return np.clip(_chw(out, c), 0.0, 1.0)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable spatial Gaussian per frame, radius ceil(3 sigma), reflected edges."""
    if sigma == 0:
        return data.copy()
    k = gaussian_kernel(sigma).astype(data.dtype if data.dtype == np.float64 else np.float32)
    c = data.shape[0]
    out = cv2.sepFilter2D(_hwc(data), -1, k, k, borderType=cv2.BORDER_REFLECT)
    return _chw(out, c)


def noise(data: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return data.copy()
    dtype = np.float64 if data.dtype == np.float64 else np.float32
    out = rng.standard_normal(data.shape, dtype=dtype)
    out *= sigma
    out += data
    return np.clip(out, 0.0, 1.0, out=out)


# --- grid level --------------------------------------------------------------

def random_crop(grid: GridSequence, size: tuple[int, int], rng: np.random.Generator) -> GridSequence:
    _, h, w = grid.data.shape
    if size[0] > h or size[1] > w:
        raise GridConfigError(f"crop {size} larger than grid {(h, w)}")
    top = int(rng.integers(0, h - size[0] + 1))
    left = int(rng.integers(0, w - size[1] + 1))
    return grid.with_data(crop_resize(grid.data, top, left, size))


def random_rotate(grid: GridSequence, angle_range: tuple[float, float], rng: np.random.Generator) -> GridSequence:
    angle = float(rng.uniform(angle_range[0], angle_range[1])) if angle_range[1] > angle_range[0] else float(angle_range[0])
    return grid.with_data(rotate(grid.data, angle))


def add_noise(grid: GridSequence, sigma: float, rng: np.random.Generator) -> GridSequence:
    return grid.with_data(noise(grid.data, sigma, rng))


def gaussian_blur(grid: GridSequence, sigma: float) -> GridSequence:
    return grid.with_data(blur(grid.data, sigma))


def base_pipeline(grid: GridSequence, config: BaseAugConfig,
                  rng: Optional[np.random.Generator] = None) -> GridSequence:
    """Crop, rotate, noise, blur, in that order; deterministic for a given generator state."""
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    out = random_crop(grid, config.crop_size, rng)
    out = random_rotate(out, config.rotation_range, rng)
    out = add_noise(out, config.noise_sigma, rng)
    lo = min(config.blur_sigma_min, config.blur_sigma)
    sigma = float(rng.uniform(lo, config.blur_sigma)) if config.blur_sigma > lo else config.blur_sigma
    return gaussian_blur(out, sigma)
