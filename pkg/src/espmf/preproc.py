"""Trajectory smoothing and training-split normalization statistics."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError
from .pairs import motion_vectors, pair_index, pose_vectors
from .skeleton_io import SkeletonSequence


@dataclass(frozen=True)
class SavGolConfig:
    window: int = 5
    poly_order: int = 3

    def __post_init__(self) -> None:
        if self.window < 3 or self.window % 2 == 0:
            raise ConfigError(f"smoothing window must be odd and >= 3, got {self.window}")
        if not 0 <= self.poly_order < self.window:
            raise ConfigError(
                f"poly_order must be in [0, window), got {self.poly_order} for window {self.window}"
            )


def savgol_coefficients(config: SavGolConfig) -> np.ndarray:
    """Convolution weights giving the least-squares polynomial value at the window centre."""
    half = config.window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    vander = x[:, None] ** np.arange(config.poly_order + 1)
    # row 0 of the pseudo-inverse evaluates the fitted polynomial at x = 0
    return np.linalg.pinv(vander)[0]


def smooth_sequence(seq: SkeletonSequence, config: SavGolConfig = SavGolConfig()) -> SkeletonSequence:
    """Filter every joint coordinate along time.

    Edges are extended by point reflection about the end samples
    (``2*x[0] - x[k]``), which keeps polynomials up to degree one intact.
    Sequences shorter than the window come back unchanged.
    """
    n = seq.n_frames
    if n < config.window:
        return seq.with_coords(seq.coords.copy())
    half = config.window // 2
    weights = savgol_coefficients(config)
    padded = np.pad(seq.coords, ((half, half), (0, 0), (0, 0)), mode="reflect", reflect_type="odd")
    out = np.zeros_like(seq.coords)
    for i, w in enumerate(weights):
        out += w * padded[i:i + n]
    return seq.with_coords(out)


@dataclass(frozen=True)
class NormalizationStats:
    c_min: tuple[float, float, float]
    c_max: tuple[float, float, float]
    d_max: float

    def __post_init__(self) -> None:
        lo, hi = np.asarray(self.c_min, float), np.asarray(self.c_max, float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("c_min and c_max need three components")
        if not np.all(lo < hi):
            raise DegenerateDataError(f"coordinate range collapses: c_min={self.c_min}, c_max={self.c_max}")
        if not self.d_max > 0:
            raise DegenerateDataError("maximum joint distance is zero")

    def to_dict(self) -> dict:
        return {"c_min": list(self.c_min), "c_max": list(self.c_max), "d_max": self.d_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(tuple(map(float, d["c_min"])), tuple(map(float, d["c_max"])), float(d["d_max"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "NormalizationStats":
        return cls.from_dict(json.loads(text))


def compute_stats(train: Sequence[SkeletonSequence]) -> NormalizationStats:
    """Coordinate extrema and the largest encoder distance over the training split."""
    if not train:
        raise ConfigError("cannot compute statistics from an empty training split")
    c_min = np.full(3, np.inf)
    c_max = np.full(3, -np.inf)
    d_max = 0.0
    for seq in train:
        flat = seq.coords.reshape(-1, 3)
        c_min = np.minimum(c_min, flat.min(axis=0))
        c_max = np.maximum(c_max, flat.max(axis=0))
        idx = pair_index(seq.n_joints)
        if len(idx.pf_j):
            d_max = max(d_max, float(np.linalg.norm(pose_vectors(seq.coords, idx), axis=-1).max()))
        if seq.n_frames > 1:
            d_max = max(d_max, float(np.linalg.norm(motion_vectors(seq.coords, idx), axis=-1).max()))
    return NormalizationStats(tuple(c_min.tolist()), tuple(c_max.tolist()), d_max)
