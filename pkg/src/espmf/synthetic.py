"""Generated skeleton corpora with known, separable motion signatures.

Used by the test suite, the benchmark and the CLI ``synth`` command when no
real dataset is at hand.  Joint order follows the 20-joint Kinect v1 layout
used by MSR Action3D.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .skeleton_io import SkeletonSequence, write_canonical

# hip centre, spine, shoulder centre, head, L shoulder/elbow/wrist/hand,
# R shoulder/elbow/wrist/hand, L hip/knee/ankle/foot, R hip/knee/ankle/foot
BASE_POSE = np.array([
    [0.00, 0.00, 0.0], [0.00, 0.20, 0.0], [0.00, 0.45, 0.0], [0.00, 0.62, 0.0],
    [-0.18, 0.42, 0.0], [-0.22, 0.15, 0.0], [-0.24, -0.08, 0.0], [-0.25, -0.15, 0.0],
    [0.18, 0.42, 0.0], [0.22, 0.15, 0.0], [0.24, -0.08, 0.0], [0.25, -0.15, 0.0],
    [-0.10, -0.05, 0.0], [-0.11, -0.45, 0.0], [-0.12, -0.85, 0.0], [-0.12, -0.92, 0.08],
    [0.10, -0.05, 0.0], [0.11, -0.45, 0.0], [0.12, -0.85, 0.0], [0.12, -0.92, 0.08],
])

R_ARM, L_ARM = [9, 10, 11], [5, 6, 7]
R_LEG, L_LEG = [17, 18, 19], [13, 14, 15]
UPPER = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]
ARM_WEIGHTS = np.array([0.4, 0.8, 1.0])


def _wave(arm, axis):
    def motion(phase, amp):
        d = np.zeros(phase.shape + BASE_POSE.shape)
        d[:, arm, 1] += 0.5 * ARM_WEIGHTS  # raise the arm
        d[:, arm, axis] += amp * np.sin(phase)[:, None] * ARM_WEIGHTS
        return d
    return motion


def _bend(phase, amp):
    d = np.zeros(phase.shape + BASE_POSE.shape)
    s = 0.5 * (1 - np.cos(phase))
    d[:, UPPER, 1] -= 0.35 * amp * s[:, None]
    d[:, UPPER, 2] += 0.25 * amp * s[:, None]
    return d


def _kick(leg, axis):
    def motion(phase, amp):
        d = np.zeros(phase.shape + BASE_POSE.shape)
        s = np.maximum(np.sin(phase), 0)
        d[:, leg, axis] += amp * 1.2 * s[:, None] * ARM_WEIGHTS
        d[:, leg, 1] += 0.4 * amp * s[:, None] * ARM_WEIGHTS
        return d
    return motion


def _punch(arm):
    def motion(phase, amp):
        d = np.zeros(phase.shape + BASE_POSE.shape)
        s = np.abs(np.sin(phase))
        d[:, arm, 1] += 0.45 * ARM_WEIGHTS
        d[:, arm, 2] -= amp * 1.5 * s[:, None] * ARM_WEIGHTS
        return d
    return motion


def _jump(phase, amp):
    d = np.zeros(phase.shape + BASE_POSE.shape)
    d[:, :, 1] += 0.6 * amp * np.maximum(np.sin(phase), 0)[:, None]
    return d


ACTIONS = {
    "right_wave": _wave(R_ARM, 0),
    "bend": _bend,
    "right_kick": _kick(R_LEG, 2),
    "left_wave": _wave(L_ARM, 0),
    "left_kick": _kick(L_LEG, 2),
    "right_punch": _punch(R_ARM),
    "jump": _jump,
    "left_punch": _punch(L_ARM),
}


def make_sequence(action: str, label: int, rng: np.random.Generator, subject: int = 1,
                  trial: int = 1, n_frames: int | None = None, noise: float = 0.01) -> SkeletonSequence:
    """One noisy performance of ``action`` with random speed, size and placement."""
    n = n_frames if n_frames is not None else int(rng.integers(20, 61))
    cycles = rng.uniform(1.0, 2.5)
    phase = 2 * np.pi * cycles * np.arange(n) / max(n - 1, 1) + rng.uniform(0, 0.5)
    amp = rng.uniform(0.2, 0.35)
    scale = rng.uniform(0.85, 1.15)
    body = BASE_POSE * scale
    coords = body[None] + scale * ACTIONS[action](phase, amp)
    coords += np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1), rng.uniform(2.0, 3.0)])
    coords += rng.normal(0.0, noise, coords.shape)
    return SkeletonSequence(coords=coords, label=label, subject=subject, camera=0, trial=trial,
                            source_path=f"synth_{action}_s{subject:02d}_e{trial:02d}")


def make_corpus(actions: list[str], per_class: int, seed: int, subjects: list[int] | None = None,
                noise: float = 0.01) -> list[SkeletonSequence]:
    """``per_class`` sequences of each action, labelled by position in ``actions``."""
    rng = np.random.default_rng(seed)
    subjects = subjects or list(range(1, 11))
    out = []
    for label, action in enumerate(actions):
        for i in range(per_class):
            out.append(make_sequence(action, label, rng, subject=subjects[i % len(subjects)],
                                     trial=i // len(subjects) + 1, noise=noise))
    return out


def write_corpus(seqs: list[SkeletonSequence], directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, seq in enumerate(seqs):
        p = directory / f"seq{i:04d}_a{seq.label:02d}_s{seq.subject:02d}_e{seq.trial:02d}.json"
        write_canonical(seq, p)
        paths.append(p)
    return paths
