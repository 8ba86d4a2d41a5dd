"""Skeleton sequence -> pose/motion colour image.

Each frame contributes a pose column (distances and difference vectors
between all joint pairs of that frame) and each pair of consecutive frames a
motion column (the same quantities between frame ``t`` and ``t+1``).  Columns
are interleaved in time order, giving an image of width ``2N - 1`` that is
finally resized to the network input size.

Arithmetic is written out element-wise (``dx*dx + dy*dy + dz*dz``,
``255 * (v - lo) / (hi - lo)``) so a scalar re-implementation reproduces the
bytes exactly.
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateDataError, SequenceTooShortError
from .pairs import PairIndex, motion_vectors, pair_index, pose_vectors
from .preproc import NormalizationStats
from .skeleton_io import Joint, SkeletonSequence

__all__ = [
    "JET_ANCHORS", "JetPalette", "PairIndex", "SpmfImage", "assemble_spmf", "build_motion_column",
    "build_pose_column", "compute_jjd", "compute_jjo", "encode_raw", "jet_encode", "jet_palette",
    "normalize_component", "pair_index", "resize_bilinear",
]

JET_ANCHORS = (
    (0.0, (0, 0, 128)),
    (0.125, (0, 0, 255)),
    (0.375, (0, 255, 255)),
    (0.625, (255, 255, 0)),
    (0.875, (255, 0, 0)),
    (1.0, (128, 0, 0)),
)

IMAGE_SIZE = 32


@dataclass(frozen=True)
class JetPalette:
    colors: np.ndarray  # (256, 3) uint8

    def __post_init__(self) -> None:
        if self.colors.shape != (256, 3) or self.colors.dtype != np.uint8:
            raise ValueError("palette must be 256 RGB byte triples")

    def __getitem__(self, index):
        return self.colors[index]


@lru_cache(maxsize=1)
def jet_palette() -> JetPalette:
    """256-entry JET palette, linear between anchors, rounded half up.

    Entry ``i`` sits at ``i / 255``.  Interpolation is done in exact rational
    arithmetic so entries that land on a half (index 127, for one) round the
    same way on every platform.
    """
    anchors = [(Fraction(a).limit_denominator(1000), c) for a, c in JET_ANCHORS]
    colors = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        x = Fraction(i, 255)
        for (a, ca), (b, cb) in zip(anchors[:-1], anchors[1:]):
            if a <= x <= b:
                t = (x - a) / (b - a)
                colors[i] = [math.floor(u + (v - u) * t + Fraction(1, 2)) for u, v in zip(ca, cb)]
                break
    colors.flags.writeable = False
    return JetPalette(colors)


def _xyz(p) -> tuple[float, float, float]:
    if isinstance(p, Joint):
        return p.x, p.y, p.z
    x, y, z = (float(c) for c in np.asarray(p, dtype=np.float64)[:3])
    return x, y, z


def compute_jjd(p, q) -> float:
    px, py, pz = _xyz(p)
    qx, qy, qz = _xyz(q)
    dx, dy, dz = px - qx, py - qy, pz - qz
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def compute_jjo(p, q) -> np.ndarray:
    return np.subtract(_xyz(p), _xyz(q))


def normalize_component(v: float, lo: float, hi: float) -> int:
    if not lo < hi:
        raise DegenerateDataError(f"empty normalization range [{lo}, {hi}]")
    v = min(max(v, lo), hi)
    return int(math.floor(255 * (v - lo) / (hi - lo)))


def jet_encode(d: float, palette: JetPalette | None = None) -> tuple[int, int, int]:
    palette = palette or jet_palette()
    d = min(max(d, 0.0), 1.0)
    r, g, b = palette[min(int(math.floor(d * 255)), 255)]
    return int(r), int(g), int(b)


# --- vectorised column builders -------------------------------------------------

def _distance_bytes(vectors: np.ndarray, d_max: float, palette: JetPalette) -> np.ndarray:
    dx, dy, dz = vectors[..., 0], vectors[..., 1], vectors[..., 2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    d = np.minimum(dist / d_max, 1.0)
    idx = np.minimum(np.floor(d * 255), 255).astype(np.intp)
    return palette.colors[idx]


def _orientation_bytes(vectors: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    lo = np.asarray(stats.c_min, dtype=np.float64)
    hi = np.asarray(stats.c_max, dtype=np.float64)
    v = np.clip(vectors, lo, hi)
    return np.floor(255 * (v - lo) / (hi - lo)).astype(np.uint8)


def _features(vectors: np.ndarray, stats: NormalizationStats, palette: JetPalette) -> np.ndarray:
    """Stack the distance block above the orientation block along the pair axis."""
    return np.concatenate(
        [_distance_bytes(vectors, stats.d_max, palette), _orientation_bytes(vectors, stats)], axis=-2
    )


def _fit_height(cols: np.ndarray, height: int) -> np.ndarray:
    """Crop trailing rows, or mirror-pad, along axis -2 to ``height`` rows."""
    h = cols.shape[-2]
    if h >= height:
        return cols[..., :height, :]
    reps = [cols]
    while sum(c.shape[-2] for c in reps) < height:
        reps.append(np.flip(reps[-1], axis=-2))
    return np.concatenate(reps, axis=-2)[..., :height, :]


def _frame_coords(frame) -> np.ndarray:
    if hasattr(frame, "joints"):
        return np.array([_xyz(j) for j in frame.joints])
    return np.asarray(frame, dtype=np.float64)[:, :3]


def build_pose_column(frame, stats: NormalizationStats, palette: JetPalette | None = None) -> np.ndarray:
    """Pose column for one frame: ``(J*(J-1), 3)`` bytes."""
    coords = _frame_coords(frame)
    idx = pair_index(len(coords))
    return _features(pose_vectors(coords, idx), stats, palette or jet_palette())


def build_motion_column(f_t, f_t1, stats: NormalizationStats,
                        palette: JetPalette | None = None) -> np.ndarray:
    """Motion column between two frames, fitted to the pose-column height."""
    pair = np.stack([_frame_coords(f_t), _frame_coords(f_t1)])
    idx = pair_index(pair.shape[1])
    col = _features(motion_vectors(pair, idx)[0], stats, palette or jet_palette())
    return _fit_height(col, 2 * len(idx.pf_j))


def encode_raw(seq: SkeletonSequence, stats: NormalizationStats,
               palette: JetPalette | None = None) -> np.ndarray:
    """Pre-resize image ``(J*(J-1), 2N-1, 3)`` with interleaved pose/motion columns."""
    if seq.n_frames < 2:
        raise SequenceTooShortError(f"{seq.source_path or 'sequence'}: need at least 2 frames")
    if seq.n_joints < 2:
        raise SequenceTooShortError("need at least 2 joints to form joint pairs")
    palette = palette or jet_palette()
    idx = pair_index(seq.n_joints)
    height = 2 * len(idx.pf_j)
    pose = _features(pose_vectors(seq.coords, idx), stats, palette)
    motion = _fit_height(_features(motion_vectors(seq.coords, idx), stats, palette), height)
    n = seq.n_frames
    cols = np.empty((2 * n - 1, height, 3), dtype=np.uint8)
    cols[0::2] = pose
    cols[1::2] = motion
    return np.ascontiguousarray(cols.transpose(1, 0, 2))


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(image: np.ndarray, height: int = IMAGE_SIZE, width: int = IMAGE_SIZE) -> np.ndarray:
    """Half-pixel-centred bilinear resize of an ``(H, W, C)`` byte image.

    Interpolation runs in float64; results are rounded half up to bytes.
    """
    img = image.astype(np.float64)
    r0, r1, fr = _axis_weights(img.shape[0], height)
    c0, c1, fc = _axis_weights(img.shape[1], width)
    rows = img[r0] * (1 - fr)[:, None, None] + img[r1] * fr[:, None, None]
    out = rows[:, c0] * (1 - fc)[None, :, None] + rows[:, c1] * fc[None, :, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


@dataclass
class SpmfImage:
    pixels: np.ndarray
    raw_shape: tuple[int, int] = (0, 0)
    source: str = ""
    raw: np.ndarray | None = field(default=None, repr=False)


def assemble_spmf(seq: SkeletonSequence, stats: NormalizationStats,
                  palette: JetPalette | None = None, size: int = IMAGE_SIZE,
                  keep_raw: bool = False) -> SpmfImage:
    raw = encode_raw(seq, stats, palette)
    return SpmfImage(
        pixels=resize_bilinear(raw, size, size),
        raw_shape=raw.shape[:2],
        source=seq.source_path,
        raw=raw if keep_raw else None,
    )
