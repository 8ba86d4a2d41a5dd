"""Skeleton file parsers, canonical JSON interchange, manifests and splits.

Two dataset layouts are supported:

* MSR Action3D: whitespace separated ``x y z confidence`` rows, 20 rows per
  frame, metadata encoded in file names like ``a01_s03_e02_skeleton3D.txt``.
* NTU RGB+D ``.skeleton`` files: frame count header, then per frame a body
  count and per body an info line, a joint count and one line per joint.
  Metadata comes from names like ``S001C002P003R002A013.skeleton``.

Everything is converted to :class:`SkeletonSequence`, which stores the joint
coordinates as a dense ``(frames, joints, 3)`` array.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, MalformedFileError, ParseError

MSR_JOINTS = 20
NTU_JOINTS = 25

MSR_NAME_RE = re.compile(r"a(\d+)_s(\d+)_e(\d+)")
NTU_NAME_RE = re.compile(r"S(\d{3})C(\d{3})P(\d{3})R(\d{3})A(\d{3})")


class Joint(NamedTuple):
    x: float
    y: float
    z: float
    confidence: float = 1.0


@dataclass(frozen=True)
class Frame:
    joints: tuple[Joint, ...]
    body_id: int = 0


@dataclass(eq=False)
class SkeletonSequence:
    """A tracked body over time.

    Attributes:
        coords: float64 array ``(N, J, 3)``.
        confidence: float64 array ``(N, J)`` with values in [0, 1].
        body_ids: int64 array ``(N,)``, the tracked body of each frame.
        label: 0-based action class.
    """

    coords: np.ndarray
    confidence: np.ndarray | None = None
    body_ids: np.ndarray | None = None
    label: int = 0
    subject: int = 0
    camera: int = 0
    trial: int = 0
    source_path: str = ""

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ValueError(f"coords must be (N, J, 3), got {self.coords.shape}")
        n, j, _ = self.coords.shape
        if n < 1 or j < 1:
            raise ValueError("a sequence needs at least one frame and one joint")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("joint coordinates must be finite")
        if self.confidence is None:
            self.confidence = np.ones((n, j))
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.confidence.shape != (n, j):
            raise ValueError("confidence must be (N, J)")
        if np.any(~(self.confidence >= 0.0) | (self.confidence > 1.0)):
            raise ValueError("joint confidence must lie in [0, 1]")
        if self.body_ids is None:
            self.body_ids = np.zeros(n, dtype=np.int64)
        self.body_ids = np.asarray(self.body_ids, dtype=np.int64)
        if self.body_ids.shape != (n,):
            raise ValueError("body_ids must be (N,)")

    @property
    def n_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def n_joints(self) -> int:
        return self.coords.shape[1]

    def frame(self, t: int) -> Frame:
        joints = tuple(
            Joint(*map(float, self.coords[t, j]), float(self.confidence[t, j]))
            for j in range(self.n_joints)
        )
        return Frame(joints, int(self.body_ids[t]))

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(t) for t in range(self.n_frames)]

    @classmethod
    def from_frames(cls, frames: Iterable[Frame], **meta) -> "SkeletonSequence":
        frames = list(frames)
        if not frames:
            raise ValueError("a sequence needs at least one frame")
        counts = {len(f.joints) for f in frames}
        if len(counts) != 1:
            raise ValueError("all frames must share the same joint count")
        arr = np.array([[tuple(j) for j in f.joints] for f in frames], dtype=np.float64)
        return cls(
            coords=arr[..., :3],
            confidence=arr[..., 3],
            body_ids=np.array([f.body_id for f in frames]),
            **meta,
        )

    def with_coords(self, coords: np.ndarray) -> "SkeletonSequence":
        return replace(self, coords=coords, confidence=self.confidence.copy(),
                       body_ids=self.body_ids.copy())

    def identical(self, other: "SkeletonSequence") -> bool:
        """Bit-exact comparison of data and metadata."""
        return (
            self.coords.shape == other.coords.shape
            and self.coords.tobytes() == other.coords.tobytes()
            and self.confidence.tobytes() == other.confidence.tobytes()
            and np.array_equal(self.body_ids, other.body_ids)
            and (self.label, self.subject, self.camera, self.trial, self.source_path)
            == (other.label, other.subject, other.camera, other.trial, other.source_path)
        )


def _as_text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def _floats(tokens: list[str], path: str, lineno: int) -> list[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        bad = next(t for t in tokens if not _is_float(t))
        raise ParseError(f"non-numeric token {bad!r}", path, lineno) from None
    if not all(math.isfinite(v) for v in values):
        raise ParseError("non-finite value", path, lineno)
    return values


def _is_float(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def parse_msr_name(name: str) -> tuple[int, int, int]:
    """Return ``(label, subject, trial)`` from an ``aAA_sSS_eEE`` file name."""
    m = MSR_NAME_RE.search(Path(name).name)
    if m is None:
        raise MalformedFileError(f"{name}: file name does not match aAA_sSS_eEE")
    action, subject, trial = (int(g) for g in m.groups())
    if action < 1:
        raise MalformedFileError(f"{name}: action ids start at 1")
    return action - 1, subject, trial


def parse_msr(data: bytes | str, name: str, joint_count: int = MSR_JOINTS) -> SkeletonSequence:
    label, subject, trial = parse_msr_name(name)
    rows = []
    for lineno, line in enumerate(_as_text(data).splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 4:
            raise MalformedFileError(f"{name}:{lineno}: expected 4 values, got {len(tokens)}")
        rows.append(_floats(tokens, name, lineno))
    if not rows or len(rows) % joint_count:
        raise MalformedFileError(
            f"{name}: {len(rows)} joint rows is not a positive multiple of {joint_count}"
        )
    arr = np.array(rows).reshape(-1, joint_count, 4)
    conf = arr[..., 3]
    if np.any((conf < 0) | (conf > 1)):
        raise MalformedFileError(f"{name}: confidence outside [0, 1]")
    return SkeletonSequence(
        coords=arr[..., :3], confidence=conf, label=label, subject=subject,
        camera=0, trial=trial, source_path=str(name),
    )


def parse_ntu_name(name: str) -> dict[str, int]:
    m = NTU_NAME_RE.search(Path(name).name)
    if m is None:
        raise MalformedFileError(f"{name}: file name does not match SsssCcccPpppRrrrAaaa")
    setup, camera, subject, trial, action = (int(g) for g in m.groups())
    if action < 1:
        raise MalformedFileError(f"{name}: action ids start at 1")
    return {"setup": setup, "camera": camera, "subject": subject, "trial": trial,
            "label": action - 1}


class _Lines:
    """Cursor over the non-blank lines of a file, keeping line numbers."""

    def __init__(self, text: str, path: str):
        self.items = [(i, ln.split()) for i, ln in enumerate(text.splitlines(), 1) if ln.strip()]
        self.pos = 0
        self.path = path

    def next(self, what: str) -> tuple[int, list[str]]:
        if self.pos >= len(self.items):
            raise MalformedFileError(f"{self.path}: file ends early, expected {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def count(self, what: str) -> int:
        lineno, tokens = self.next(what)
        if len(tokens) != 1:
            raise MalformedFileError(f"{self.path}:{lineno}: expected a single {what}")
        try:
            value = int(tokens[0])
        except ValueError:
            raise ParseError(f"{what} {tokens[0]!r} is not an integer", self.path, lineno) from None
        if value < 0:
            raise MalformedFileError(f"{self.path}:{lineno}: negative {what}")
        return value


def parse_ntu(data: bytes | str, name: str) -> list[SkeletonSequence]:
    """Parse an NTU ``.skeleton`` file into one sequence per tracked body."""
    meta = parse_ntu_name(name)
    lines = _Lines(_as_text(data), name)
    n_frames = lines.count("frame count")
    bodies: dict[int, list[np.ndarray]] = {}
    for _ in range(n_frames):
        n_bodies = lines.count("body count")
        for _ in range(n_bodies):
            lineno, info = lines.next("body info line")
            try:
                body_id = int(info[0])
            except ValueError:
                raise ParseError(f"body id {info[0]!r} is not an integer", name, lineno) from None
            n_joints = lines.count("joint count")
            if n_joints != NTU_JOINTS:
                raise MalformedFileError(f"{name}: expected {NTU_JOINTS} joints, got {n_joints}")
            xyz = np.empty((n_joints, 3))
            for j in range(n_joints):
                lineno, tokens = lines.next("joint line")
                if len(tokens) < 3:
                    raise MalformedFileError(f"{name}:{lineno}: joint line has < 3 values")
                xyz[j] = _floats(tokens[:3], name, lineno)
            bodies.setdefault(body_id, []).append(xyz)
    if lines.pos != len(lines.items):
        lineno = lines.items[lines.pos][0]
        raise MalformedFileError(f"{name}:{lineno}: trailing data after {n_frames} declared frames")
    return [
        SkeletonSequence(
            coords=np.stack(frames), body_ids=np.full(len(frames), body_id),
            label=meta["label"], subject=meta["subject"], camera=meta["camera"],
            trial=meta["trial"], source_path=str(name),
        )
        for body_id, frames in bodies.items()
    ]


def read_msr(path: str | Path, joint_count: int = MSR_JOINTS) -> SkeletonSequence:
    path = Path(path)
    return parse_msr(path.read_bytes(), str(path), joint_count)


def read_ntu(path: str | Path) -> list[SkeletonSequence]:
    path = Path(path)
    return parse_ntu(path.read_bytes(), str(path))


# --- canonical JSON ---------------------------------------------------------

def to_canonical(seq: SkeletonSequence) -> dict:
    rows = np.concatenate([seq.coords, seq.confidence[..., None]], axis=2)
    return {
        "label": seq.label,
        "subject": seq.subject,
        "camera": seq.camera,
        "trial": seq.trial,
        "joints_per_frame": seq.n_joints,
        "frames": rows.reshape(-1, 4).tolist(),
        "body_ids": seq.body_ids.tolist(),
        "source_path": seq.source_path,
    }


def from_canonical(doc: dict, source_path: str = "") -> SkeletonSequence:
    try:
        jpf = int(doc["joints_per_frame"])
        rows = np.asarray(doc["frames"], dtype=np.float64)
        meta = {k: int(doc[k]) for k in ("label", "subject", "camera", "trial")}
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFileError(f"{source_path}: invalid canonical document ({exc})") from None
    if rows.ndim != 2 or rows.shape[1] != 4 or jpf < 1 or len(rows) % jpf or not len(rows):
        raise MalformedFileError(f"{source_path}: frames must be [x, y, z, conf] rows, "
                                 f"a positive multiple of joints_per_frame")
    arr = rows.reshape(-1, jpf, 4)
    try:
        return SkeletonSequence(
            coords=arr[..., :3], confidence=arr[..., 3], body_ids=doc.get("body_ids"),
            source_path=doc.get("source_path", source_path), **meta,
        )
    except ValueError as exc:
        raise MalformedFileError(f"{source_path}: {exc}") from None


def write_canonical(seq: SkeletonSequence, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_canonical(seq)))


def read_canonical(path: str | Path) -> SkeletonSequence:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), str(path), exc.lineno) from None
    return from_canonical(doc, str(path))


def read_sequences(path: str | Path, kind: str) -> list[SkeletonSequence]:
    """Read any supported file; always returns a list (NTU may hold several bodies)."""
    if kind == "msr":
        return [read_msr(path)]
    if kind == "ntu":
        return read_ntu(path)
    if kind == "canonical":
        return [read_canonical(path)]
    raise ConfigError(f"unknown dataset kind {kind!r}")


# --- manifests ----------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    subject: int
    camera: int = 0
    trial: int = 0


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.class_names and self.entries:
            n = max(e.label for e in self.entries) + 1
            self.class_names = [f"class_{i}" for i in range(n)]
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def validate(self) -> None:
        seen = set()
        for e in self.entries:
            if e.path in seen:
                raise ConfigError(f"duplicate manifest entry {e.path}")
            seen.add(e.path)
            if not 0 <= e.label < self.num_classes:
                raise ConfigError(f"{e.path}: label {e.label} outside [0, {self.num_classes})")
        if self.entries and {e.label for e in self.entries} != set(range(self.num_classes)):
            raise ConfigError("manifest labels are not dense over the class list")


MANIFEST_HEADER = ["path", "label", "subject", "camera", "trial"]


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            w.writerow([e.path, e.label, e.subject, e.camera, e.trial])


def read_manifest(path: str | Path, class_names: list[str] | None = None) -> DatasetManifest:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames)[:5] != MANIFEST_HEADER:
            raise ConfigError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        try:
            entries = [
                ManifestEntry(row["path"], int(row["label"]), int(row["subject"]),
                              int(row["camera"]), int(row["trial"]))
                for row in reader
            ]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: bad manifest row ({exc})") from None
    return DatasetManifest(entries, list(class_names or []))


# provenance files the command-line tools write next to data
RESERVED_NAMES = frozenset({"config.json", "dataset.json", "stats.json", "metrics.json", "benchmark.json"})


def scan_dataset(root: str | Path, kind: str,
                 errors: list[tuple[str, str]] | None = None) -> DatasetManifest:
    """Build a manifest from a directory of skeleton files.

    MSR and NTU metadata come from file names; canonical files are opened,
    and an optional ``classes.txt`` beside them names the labels.  When an
    ``errors`` list is passed, unusable files are recorded there as
    ``(path, message)`` and skipped instead of raising.
    """
    root = Path(root)
    patterns = {"msr": "*.txt", "ntu": "*.skeleton", "canonical": "*.json"}
    if kind not in patterns:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    entries = []
    for p in sorted(root.rglob(patterns[kind])):
        if p.name in RESERVED_NAMES or p.name == "classes.txt":
            continue
        try:
            if kind == "msr":
                label, subject, trial = parse_msr_name(p.name)
                entries.append(ManifestEntry(str(p), label, subject, 0, trial))
            elif kind == "ntu":
                m = parse_ntu_name(p.name)
                entries.append(ManifestEntry(str(p), m["label"], m["subject"], m["camera"], m["trial"]))
            else:
                seq = read_canonical(p)
                entries.append(ManifestEntry(str(p), seq.label, seq.subject, seq.camera, seq.trial))
        except (ParseError, MalformedFileError, OSError) as exc:
            if errors is None:
                raise
            errors.append((str(p), str(exc)))
    if not entries:
        raise ConfigError(f"no {kind} files found under {root}")
    names = None
    if kind == "canonical" and (root / "classes.txt").is_file():
        names = [n.strip() for n in (root / "classes.txt").read_text().splitlines() if n.strip()]
        if len(names) != len({e.label for e in entries}):
            raise ConfigError(f"{root / 'classes.txt'} names {len(names)} classes, files use "
                              f"{len({e.label for e in entries})}")
    if kind == "msr":
        names = _split_defaults()["msr_classes"]
        if {e.label for e in entries} != set(range(len(names))):
            names = None
    return DatasetManifest(entries, list(names or []))


# --- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Train/test partition keyed on subject or camera IDs.

    ``classes`` optionally restricts the split to a subset of labels (MSR
    AS1/AS2/AS3); kept entries are relabelled densely in that order.
    """

    name: str
    key: str
    train_ids: frozenset[int]
    test_ids: frozenset[int]
    classes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.key not in ("subject", "camera"):
            raise ConfigError(f"split key must be subject or camera, got {self.key!r}")
        if self.train_ids & self.test_ids:
            raise ConfigError(f"split {self.name}: train and test IDs overlap")

    def class_names(self, manifest: DatasetManifest) -> list[str]:
        if self.classes is None:
            return list(manifest.class_names)
        return [manifest.class_names[c] for c in self.classes]


def _split_defaults(path: str | Path | None = None) -> dict:
    if path is not None:
        return json.loads(Path(path).read_text())
    return json.loads(resources.files("espmf.data").joinpath("splits.json").read_text())


def builtin_splits(path: str | Path | None = None) -> dict[str, SplitSpec]:
    """Load split definitions (the packaged defaults unless ``path`` is given)."""
    out = {}
    for name, d in _split_defaults(path)["splits"].items():
        classes = tuple(d["classes"]) if d.get("classes") is not None else None
        out[name] = SplitSpec(name, d["key"], frozenset(d["train"]), frozenset(d["test"]), classes)
    return out


def make_split(
    manifest: DatasetManifest, spec: SplitSpec
) -> tuple[list[ManifestEntry], list[ManifestEntry]]:
    relabel = None if spec.classes is None else {c: i for i, c in enumerate(spec.classes)}
    train, test = [], []
    for e in manifest.entries:
        if relabel is not None:
            if e.label not in relabel:
                continue
            e = replace(e, label=relabel[e.label])
        key = getattr(e, spec.key)
        if key in spec.train_ids:
            train.append(e)
        elif key in spec.test_ids:
            test.append(e)
    if not train or not test:
        raise ConfigError(
            f"split {spec.name}: empty {'train' if not train else 'test'} set "
            f"({len(train)} train / {len(test)} test)"
        )
    return train, test
