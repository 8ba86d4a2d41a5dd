"""Binary checkpoint files.

Layout::

    b"SPMFCKPT"            8-byte magic
    u32 version            little endian
    u32 header_length      little endian
    header                 UTF-8 JSON: config, stats, class names, optimizer
                           hyperparameters, metadata and a tensor manifest
                           (name, group, shape, byte offset, element count)
    payload                little-endian float32 tensors, back to back

Writes go to a temporary file in the target directory, then get renamed.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from ..preproc import NormalizationStats
from .network import DenseNet, NetworkConfig
from .optim import OptimizerState

MAGIC = b"SPMFCKPT"
FORMAT_VERSION = 1
_GROUPS = ("param", "buffer", "adam_m", "adam_v")


@dataclass
class Checkpoint:
    config: NetworkConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: OptimizerState | None = None
    stats: NormalizationStats | None = None
    class_names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_network(cls, net: DenseNet, optimizer: OptimizerState | None = None,
                     stats: NormalizationStats | None = None, class_names=None,
                     meta: dict | None = None) -> "Checkpoint":
        return cls(
            config=net.config,
            params={k: p.data.copy() for k, p in net.named_parameters()},
            buffers={k: b.copy() for k, b in net.named_buffers()},
            optimizer=_copy_optimizer(optimizer),
            stats=stats,
            class_names=list(class_names or []),
            meta=dict(meta or {}),
        )

    def build_network(self, dtype=np.float32) -> DenseNet:
        net = DenseNet(self.config, dtype=dtype)
        net.load_state_dict({**self.params, **self.buffers})
        return net

    def tensors(self) -> list[tuple[str, str, np.ndarray]]:
        out = [(n, "param", a) for n, a in self.params.items()]
        out += [(n, "buffer", a) for n, a in self.buffers.items()]
        if self.optimizer is not None:
            out += [(n, "adam_m", a) for n, a in self.optimizer.m.items()]
            out += [(n, "adam_v", a) for n, a in self.optimizer.v.items()]
        return out

    def save(self, path: str | Path) -> None:
        path = Path(path)
        manifest, chunks, offset = [], [], 0
        for name, group, arr in self.tensors():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append({"name": name, "group": group, "shape": list(arr.shape),
                             "offset": offset, "count": int(arr.size)})
            chunks.append(data)
            offset += len(data)
        header = {
            "config": self.config.to_dict(),
            "stats": self.stats.to_dict() if self.stats else None,
            "class_names": self.class_names,
            "optimizer": self.optimizer.hyperparameters() if self.optimizer else None,
            "meta": self.meta,
            "tensors": manifest,
        }
        blob = json.dumps(header).encode("utf-8")
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MAGIC)
                fh.write(struct.pack("<II", self.version, len(blob)))
                fh.write(blob)
                for chunk in chunks:
                    fh.write(chunk)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        if len(raw) < 16:
            raise CheckpointError(f"{path}: truncated header")
        version, hlen = struct.unpack("<II", raw[8:16])
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        try:
            header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        payload = memoryview(raw)[16 + hlen:]
        groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
        for t in header["tensors"]:
            if t["group"] not in groups or t["name"] in groups[t["group"]]:
                raise CheckpointError(f"{path}: bad or duplicate tensor entry {t['name']}")
            end = t["offset"] + 4 * t["count"]
            if end > len(payload):
                raise CheckpointError(f"{path}: tensor {t['name']} runs past end of file")
            arr = np.frombuffer(payload[t["offset"]:end], dtype="<f4").astype(np.float32)
            groups[t["group"]][t["name"]] = arr.reshape(t["shape"])
        optimizer = None
        if header.get("optimizer") is not None:
            optimizer = OptimizerState(**header["optimizer"], m=groups["adam_m"], v=groups["adam_v"])
        stats = header.get("stats")
        return cls(
            config=NetworkConfig.from_dict(header["config"]),
            params=groups["param"],
            buffers=groups["buffer"],
            optimizer=optimizer,
            stats=NormalizationStats.from_dict(stats) if stats else None,
            class_names=header.get("class_names", []),
            meta=header.get("meta", {}),
            version=version,
        )


def _copy_optimizer(state: OptimizerState | None) -> OptimizerState | None:
    if state is None:
        return None
    return OptimizerState(state.lr, state.beta1, state.beta2, state.eps, state.t,
                          {k: v.copy() for k, v in state.m.items()},
                          {k: v.copy() for k, v in state.v.items()})
