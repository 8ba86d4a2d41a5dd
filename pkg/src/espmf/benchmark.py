"""Per-sequence latency of the inference path: encode, enhance, classify."""
from __future__ import annotations

import platform
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .classifier import Checkpoint, DenseNet
from .classifier.tensor import Tensor
from .classifier.training import images_to_input
from .encoder import assemble_spmf, jet_palette
from .enhance import equalize_adaptive
from .pipeline import EncodeSettings
from .preproc import NormalizationStats, smooth_sequence
from .skeleton_io import SkeletonSequence

STAGES = ("encode", "enhance", "inference", "total")


@dataclass
class StageLatency:
    mean_ms: float
    p95_ms: float


@dataclass
class BenchmarkReport:
    sequences_per_sec: float
    stages: dict[str, StageLatency]
    runs: int
    warmup: int
    threads: int
    hardware: str

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = {k: asdict(v) for k, v in self.stages.items()}
        return d


def _hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'}, python {platform.python_version()}"


def run_benchmark(sequences: Sequence[SkeletonSequence], model: Checkpoint | DenseNet,
                  stats: NormalizationStats, settings: EncodeSettings = EncodeSettings(),
                  warmup: int = 3, runs: int = 20, threads: int = 1) -> BenchmarkReport:
    """Time ``runs`` single-sequence passes after ``warmup`` untimed ones.

    Sequences are cycled if there are fewer than ``warmup + runs``.  Smoothing
    counts toward encoding.
    """
    if not sequences:
        raise ValueError("benchmark needs at least one sequence")
    if runs < 1:
        raise ValueError("runs must be positive")
    net = model.build_network() if isinstance(model, Checkpoint) else model
    palette = jet_palette()
    timings = {s: [] for s in STAGES}
    with threadpool_limits(limits=threads):
        for i in range(warmup + runs):
            seq = sequences[i % len(sequences)]
            t0 = time.perf_counter()
            image = assemble_spmf(smooth_sequence(seq, settings.savgol), stats, palette, settings.size).pixels
            t1 = time.perf_counter()
            if settings.enhance:
                image = equalize_adaptive(image, settings.ahe)
            t2 = time.perf_counter()
            net.forward(Tensor(images_to_input(image[None], net.dtype))).data.argmax()
            t3 = time.perf_counter()
            if i >= warmup:
                for stage, dt in zip(STAGES, (t1 - t0, t2 - t1, t3 - t2, t3 - t0)):
                    timings[stage].append(1000.0 * dt)
    stages = {s: StageLatency(float(np.mean(v)), float(np.percentile(v, 95))) for s, v in timings.items()}
    return BenchmarkReport(
        sequences_per_sec=1000.0 / stages["total"].mean_ms,
        stages=stages,
        runs=runs,
        warmup=warmup,
        threads=threads,
        hardware=_hardware_note(),
    )
