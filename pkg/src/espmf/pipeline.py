"""Sequence -> network input: smoothing, statistics, encoding, enhancement."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encoder import IMAGE_SIZE, assemble_spmf, jet_palette
from .enhance import AheConfig, equalize_adaptive
from .preproc import NormalizationStats, SavGolConfig, compute_stats, smooth_sequence
from .skeleton_io import SkeletonSequence


@dataclass(frozen=True)
class EncodeSettings:
    savgol: SavGolConfig = field(default_factory=SavGolConfig)
    enhance: bool = True
    ahe: AheConfig = field(default_factory=AheConfig)
    size: int = IMAGE_SIZE

    def to_dict(self) -> dict:
        return {
            "savgol": {"window": self.savgol.window, "poly_order": self.savgol.poly_order},
            "enhance": self.enhance,
            "ahe": {"regions": self.ahe.regions, "grid": list(self.ahe.grid)},
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncodeSettings":
        return cls(
            savgol=SavGolConfig(**d.get("savgol", {})),
            enhance=bool(d.get("enhance", True)),
            ahe=AheConfig(d.get("ahe", {}).get("regions", 8),
                          tuple(d["ahe"]["grid"]) if d.get("ahe", {}).get("grid") else None),
            size=int(d.get("size", IMAGE_SIZE)),
        )


def smooth_all(seqs: Sequence[SkeletonSequence], settings: EncodeSettings) -> list[SkeletonSequence]:
    return [smooth_sequence(s, settings.savgol) for s in seqs]


def fit_stats(train: Sequence[SkeletonSequence], settings: EncodeSettings) -> NormalizationStats:
    """Statistics of the smoothed training split."""
    return compute_stats(smooth_all(train, settings))


def encode_sequence(seq: SkeletonSequence, stats: NormalizationStats,
                    settings: EncodeSettings = EncodeSettings(), smooth: bool = True) -> np.ndarray:
    """One ``(size, size, 3)`` byte image for a raw sequence."""
    if smooth:
        seq = smooth_sequence(seq, settings.savgol)
    image = assemble_spmf(seq, stats, jet_palette(), settings.size).pixels
    if settings.enhance:
        image = equalize_adaptive(image, settings.ahe)
    return image


def encode_many(seqs: Sequence[SkeletonSequence], stats: NormalizationStats,
                settings: EncodeSettings = EncodeSettings()) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([encode_sequence(s, stats, settings) for s in seqs])
    labels = np.array([s.label for s in seqs], dtype=np.int64)
    return images, labels
