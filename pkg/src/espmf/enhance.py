"""Histogram equalization (global and tiled) and training-time augmentation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

LEVELS = 256


def histogram(channel: np.ndarray, levels: int = LEVELS) -> tuple[np.ndarray, np.ndarray]:
    """Return per-level pixel counts and their probabilities."""
    channel = np.asarray(channel)
    if channel.size == 0:
        raise ValueError("histogram of an empty channel")
    counts = np.bincount(channel.ravel().astype(np.intp), minlength=levels)
    if len(counts) > levels:
        raise ValueError(f"pixel values exceed {levels - 1}")
    return counts, counts / channel.size


def equalization_map(channel: np.ndarray, levels: int = LEVELS) -> np.ndarray:
    """Lookup table ``T[n] = floor((L-1) * sum_{k<=n} p_k)``.

    Evaluated on integer cumulative counts, so the floor is exact.
    """
    counts, _ = histogram(channel, levels)
    cum = np.cumsum(counts, dtype=np.int64)
    return ((levels - 1) * cum) // channel.size


def equalize_global(channel: np.ndarray, levels: int = LEVELS) -> np.ndarray:
    channel = np.asarray(channel)
    lut = equalization_map(channel, levels)
    return lut[channel.astype(np.intp)].astype(channel.dtype, copy=False)


def _default_grid(regions: int) -> tuple[int, int]:
    rows = max(d for d in range(1, math.isqrt(regions) + 1) if regions % d == 0)
    return rows, regions // rows


@dataclass(frozen=True)
class AheConfig:
    regions: int = 8
    grid: tuple[int, int] | None = None
    levels: int = LEVELS

    def __post_init__(self) -> None:
        if self.regions < 1:
            raise ConfigError("regions must be positive")
        if self.grid is None:
            object.__setattr__(self, "grid", _default_grid(self.regions))
        rows, cols = self.grid
        if rows < 1 or cols < 1 or rows * cols != self.regions:
            raise ConfigError(f"tile grid {self.grid} does not give {self.regions} regions")


def equalize_adaptive(image: np.ndarray, config: AheConfig = AheConfig()) -> np.ndarray:
    """Equalize each tile of a grid independently, per colour channel.

    No clip limit and no blending between tiles.
    """
    image = np.asarray(image)
    rows, cols = config.grid
    h, w = image.shape[:2]
    if h % rows or w % cols:
        raise ConfigError(f"{h}x{w} image is not divisible by a {rows}x{cols} grid")
    th, tw = h // rows, w // cols
    if th < 2 or tw < 2:
        raise ConfigError(f"tiles of {th}x{tw} are smaller than 2x2")
    planar = image[..., None] if image.ndim == 2 else image
    out = np.empty_like(planar)
    for r in range(rows):
        for c in range(cols):
            ys, xs = slice(r * th, (r + 1) * th), slice(c * tw, (c + 1) * tw)
            for ch in range(planar.shape[2]):
                out[ys, xs, ch] = equalize_global(planar[ys, xs, ch], config.levels)
    return out[..., 0] if image.ndim == 2 else out


# --- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    padding: int = 4
    flip_prob: float = 0.5
    blur_kernel: int = 3
    sigma_range: tuple[float, float] = (0.5, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError("flip probability must be in [0, 1]")
        if self.padding < 0:
            raise ConfigError("padding must be non-negative")
        if self.blur_kernel < 1 or self.blur_kernel % 2 == 0:
            raise ConfigError("blur kernel size must be odd")
        lo, hi = self.sigma_range
        if not 0.0 <= lo <= hi:
            raise ConfigError("sigma range must satisfy 0 <= lo <= hi")


def image_rng(seed: int, index: int) -> np.random.Generator:
    """Independent, reproducible stream for image ``index``."""
    return np.random.default_rng([seed, index])


def vertical_flip(image: np.ndarray) -> np.ndarray:
    return image[::-1].copy()


def random_crop(image: np.ndarray, padding: int, rng: np.random.Generator) -> np.ndarray:
    if padding == 0:
        return image.copy()
    h, w = image.shape[:2]
    pad = ((padding, padding), (padding, padding)) + ((0, 0),) * (image.ndim - 2)
    padded = np.pad(image, pad, mode="reflect")
    top, left = rng.integers(0, 2 * padding + 1, size=2)
    return padded[top:top + h, left:left + w].copy()


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - size // 2
    if sigma <= 0:
        k = (x == 0).astype(np.float64)
    else:
        k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(image: np.ndarray, sigma: float, size: int = 3) -> np.ndarray:
    """Separable blur with reflected borders; bytes rounded half up."""
    k = gaussian_kernel(size, sigma)
    half = size // 2
    img = image.astype(np.float64)
    h, w = img.shape[:2]
    extra = ((0, 0),) * (img.ndim - 2)
    p = np.pad(img, ((half, half), (0, 0)) + extra, mode="reflect")
    img = sum(k[i] * p[i:i + h] for i in range(size))
    p = np.pad(img, ((0, 0), (half, half)) + extra, mode="reflect")
    img = sum(k[i] * p[:, i:i + w] for i in range(size))
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def augment(image: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random reflect-padded crop, vertical flip and Gaussian blur."""
    out = random_crop(image, config.padding, rng)
    if rng.random() < config.flip_prob:
        out = vertical_flip(out)
    sigma = rng.uniform(*config.sigma_range)
    return gaussian_blur(out, sigma, config.blur_kernel)
