"""Joint pair enumeration shared by the statistics pass and the encoder."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class PairIndex:
    """Lexicographic joint pair lists for ``J`` joints.

    ``pf_*`` holds the unordered pairs ``j < k`` used for pose columns;
    ``mf_*`` adds the diagonal ``j == k`` for motion columns.
    """

    n_joints: int
    pf_j: np.ndarray
    pf_k: np.ndarray
    mf_j: np.ndarray
    mf_k: np.ndarray

    @property
    def pf_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.pf_j.tolist(), self.pf_k.tolist()))

    @property
    def mf_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.mf_j.tolist(), self.mf_k.tolist()))


@lru_cache(maxsize=None)
def pair_index(n_joints: int) -> PairIndex:
    pf_j, pf_k = np.triu_indices(n_joints, k=1)
    mf_j, mf_k = np.triu_indices(n_joints, k=0)
    for a in (pf_j, pf_k, mf_j, mf_k):
        a.flags.writeable = False
    return PairIndex(n_joints, pf_j, pf_k, mf_j, mf_k)


def pose_vectors(coords: np.ndarray, idx: PairIndex) -> np.ndarray:
    """Within-frame difference vectors ``p_j - p_k``: ``(..., P, 3)``."""
    return coords[..., idx.pf_j, :] - coords[..., idx.pf_k, :]


def motion_vectors(coords: np.ndarray, idx: PairIndex) -> np.ndarray:
    """Cross-frame vectors ``p_j^t - p_k^{t+1}`` for consecutive frames: ``(N-1, M, 3)``."""
    return coords[:-1, idx.mf_j, :] - coords[1:, idx.mf_k, :]
