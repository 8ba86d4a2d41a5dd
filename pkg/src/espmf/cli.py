"""Command-line front end.

Every subcommand resolves its settings as built-in defaults, overlaid by an
optional ``--config`` JSON file, overlaid by flags given on the command line,
and writes the resolved settings to ``config.json`` in its output directory.

Exit codes: 0 success, 1 hard failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image
from threadpoolctl import threadpool_limits

from . import __version__
from .benchmark import run_benchmark
from .classifier import Checkpoint, DenseNet, NetworkConfig, evaluate, fine_tune, train
from .encoder import assemble_spmf, jet_palette
from .enhance import AheConfig, AugmentConfig, augment, equalize_adaptive
from .errors import ConfigError, EspmfError
from .pipeline import EncodeSettings
from .preproc import NormalizationStats, SavGolConfig, compute_stats, smooth_sequence
from .skeleton_io import (DatasetManifest, ManifestEntry, builtin_splits, make_split,
                          read_sequences, scan_dataset, write_manifest)
from .synthetic import ACTIONS, make_corpus, write_corpus

log = logging.getLogger("espmf")

INDEX_FIELDS = ("path", "label", "subject", "camera", "trial", "augmented", "seed")
DATASET_FILE = "dataset.json"

COMMON = {"seed": 0, "out": None, "enhance": True, "regions": 8, "depth": 16, "threads": 1,
          "deterministic": False}
DEFAULTS = {
    "synth": {"actions": "right_wave,bend,right_kick", "per_class": 10, "noise": 0.01},
    "split": {"data": None, "kind": "canonical", "split": "subject_odd_even", "split_file": None},
    "encode": {"data": None, "kind": "canonical", "split": None, "split_file": None, "stats": None,
               "augment": 0, "dump_raw": False, "window": 5, "poly_order": 3},
    "enhance": {"images": None},
    "train": {"train": None, "test": None, "epochs": 250, "batch_size": 64, "lr": 3e-4,
              "resume": None, "augment_online": False, "select_best": True},
    "eval": {"checkpoint": None, "images": None},
    "finetune": {"checkpoint": None, "train": None, "test": None, "epochs": 50, "batch_size": 64,
                 "select_best": True},
    "benchmark": {"checkpoint": None, "data": None, "kind": "canonical", "warmup": 3, "runs": 20,
                  "window": 5, "poly_order": 3},
    "pipeline": {"data": None, "kind": "canonical", "split": "subject_odd_even", "split_file": None,
                 "augment": 0, "epochs": 250, "batch_size": 64, "lr": 3e-4, "window": 5,
                 "poly_order": 3, "select_best": True},
}


# --- argument parsing -----------------------------------------------------------

def _opt(p: argparse.ArgumentParser, *names: str, **kw) -> None:
    """Option whose absence leaves no attribute, so config files can fill it."""
    p.add_argument(*names, default=argparse.SUPPRESS, **kw)


def _flag(p: argparse.ArgumentParser, name: str, dest: str, value: bool, help: str) -> None:
    p.add_argument(name, dest=dest, action="store_const", const=value, default=argparse.SUPPRESS,
                   help=help)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _opt(common, "--config", help="JSON file of settings; flags override it")
    _opt(common, "--seed", type=int)
    _opt(common, "--out", help="output directory")
    _flag(common, "--no-enhance", "enhance", False, "skip adaptive histogram equalization")
    _opt(common, "--regions", type=int, help="AHE region count (default 8, a 2x4 grid)")
    _opt(common, "--depth", type=int, choices=(16, 28, 40))
    _opt(common, "--threads", type=int, help="worker/BLAS thread count")
    _flag(common, "--deterministic", "deterministic", True, "single-threaded, reproducible run")
    _opt(common, "-v", "--verbose", action="count")

    parser = argparse.ArgumentParser(prog="espmf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"espmf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a generated skeleton corpus")
    _opt(p, "--actions", help=f"comma-separated, from: {', '.join(ACTIONS)}")
    _opt(p, "--per-class", dest="per_class", type=int)
    _opt(p, "--noise", type=float)

    p = sub.add_parser("split", parents=[common], help="write train/test manifests")
    _dataset_args(p)

    p = sub.add_parser("encode", parents=[common], help="skeleton files -> PNG images + index")
    _dataset_args(p)
    _opt(p, "--stats", help="normalization stats JSON (default: fit on the training data)")
    _opt(p, "--augment", type=int, help="augmented copies per training image")
    _flag(p, "--dump-raw", "dump_raw", True, "also write the pre-resize matrix as PPM")
    _savgol_args(p)

    p = sub.add_parser("enhance", parents=[common], help="apply AHE to an encoded image directory")
    _opt(p, "--images", help="directory holding index.csv")

    p = sub.add_parser("train", parents=[common], help="train a network on encoded images")
    _train_args(p)
    _opt(p, "--lr", type=float)
    _opt(p, "--resume", help="checkpoint to continue from")
    _flag(p, "--augment-online", "augment_online", True, "augment batches on the fly")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    _opt(p, "--checkpoint")
    _opt(p, "--images")

    p = sub.add_parser("finetune", parents=[common], help="re-head and train a checkpoint")
    _opt(p, "--checkpoint")
    _train_args(p)

    p = sub.add_parser("benchmark", parents=[common], help="single-threaded latency per sequence")
    _opt(p, "--checkpoint")
    _opt(p, "--data", help="skeleton files (default: a generated corpus)")
    _opt(p, "--kind", choices=("msr", "ntu", "canonical"))
    _opt(p, "--warmup", type=int)
    _opt(p, "--runs", type=int)
    _savgol_args(p)

    p = sub.add_parser("pipeline", parents=[common], help="split, encode, train and evaluate")
    _dataset_args(p)
    _opt(p, "--augment", type=int)
    _opt(p, "--epochs", type=int)
    _opt(p, "--batch-size", dest="batch_size", type=int)
    _opt(p, "--lr", type=float)
    _flag(p, "--last", "select_best", False, "keep the final epoch instead of the best one")
    _savgol_args(p)
    return parser


def _dataset_args(p):
    _opt(p, "--data", help="dataset directory or single file")
    _opt(p, "--kind", choices=("msr", "ntu", "canonical"))
    _opt(p, "--split", help="split name (see --split-file)")
    _opt(p, "--split-file", dest="split_file", help="JSON split definitions")


def _savgol_args(p):
    _opt(p, "--window", type=int, help="smoothing window (odd)")
    _opt(p, "--poly-order", dest="poly_order", type=int)


def _train_args(p):
    _opt(p, "--train", help="encoded training directory")
    _opt(p, "--test", help="encoded test directory")
    _opt(p, "--epochs", type=int)
    _opt(p, "--batch-size", dest="batch_size", type=int)
    _flag(p, "--last", "select_best", False, "keep the final epoch instead of the best one")


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = {**COMMON, **DEFAULTS[command]}
    given = vars(args)
    if "config" in given:
        path = Path(given["config"])
        try:
            loaded = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        loaded = loaded.get(command, loaded)
        unknown = set(loaded) - set(cfg) - {"command", "version"}
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k in cfg})
    cfg.update({k: v for k, v in given.items() if k in cfg})
    if cfg["out"] is None:
        raise ConfigError("--out is required")
    if cfg["deterministic"]:
        cfg["threads"] = 1
    if cfg["threads"] < 1:
        raise ConfigError("--threads must be positive")
    return cfg


def _echo_config(cfg: dict, command: str, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, **cfg}
    (out / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"path does not exist: {p}")
    return p


def _encode_settings(cfg: dict) -> EncodeSettings:
    return EncodeSettings(
        savgol=SavGolConfig(cfg.get("window", 5), cfg.get("poly_order", 3)),
        enhance=cfg["enhance"],
        ahe=AheConfig(cfg["regions"]),
    )


# --- dataset loading --------------------------------------------------------------

def _manifest(cfg: dict, failures: list[str] | None = None) -> DatasetManifest:
    data = _existing(cfg["data"])
    if data.is_file():
        seqs = read_sequences(data, cfg["kind"])
        s = seqs[0]
        return DatasetManifest([ManifestEntry(str(data), s.label, s.subject, s.camera, s.trial)])
    errors: list[tuple[str, str]] = []
    manifest = scan_dataset(data, cfg["kind"], errors)
    for path, message in errors:
        log.error("%s", message if path in message else f"{path}: {message}")
        if failures is not None:
            failures.append(path)
    return manifest


def _split_entries(cfg: dict, manifest: DatasetManifest):
    splits = builtin_splits(cfg["split_file"]) if cfg.get("split_file") else builtin_splits()
    if cfg["split"] not in splits:
        raise ConfigError(f"unknown split {cfg['split']!r}; known: {', '.join(sorted(splits))}")
    spec = splits[cfg["split"]]
    train_entries, test_entries = make_split(manifest, spec)
    return train_entries, test_entries, spec.class_names(manifest)


def _load(entries, kind: str, failures: list[str]):
    """Read every entry; unreadable files are reported and skipped."""
    out = []
    for e in entries:
        try:
            seqs = read_sequences(e.path, kind)
        except (EspmfError, OSError, ValueError) as exc:
            log.error("%s: %s", e.path, exc)
            failures.append(e.path)
            continue
        # NTU files may hold several bodies; the first tracked body is the actor
        seq = seqs[0]
        out.append((e, seq))
    return out


# --- encoding -----------------------------------------------------------------------

def _image_name(kind: str, e: ManifestEntry, used: dict[str, int]) -> str:
    base = f"{kind}_{e.label}_{e.subject}_{e.trial}"
    n = used.get(base, 0)
    used[base] = n + 1
    return base if n == 0 else f"{base}_{n}"


def _write_png(path: Path, image: np.ndarray) -> None:
    Image.fromarray(image).save(path, optimize=False)


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def _encode_split(items, stats: NormalizationStats, settings: EncodeSettings, cfg: dict, out: Path,
                  augment_copies: int, class_names: list[str], failures: list[str]) -> int:
    out.mkdir(parents=True, exist_ok=True)
    palette = jet_palette()
    aug_cfg = AugmentConfig(seed=cfg["seed"])

    def work(item):
        e, seq = item
        try:
            spmf = assemble_spmf(smooth_sequence(seq, settings.savgol), stats, palette, settings.size,
                                 keep_raw=cfg.get("dump_raw", False))
        except EspmfError as exc:
            return e, None, None, str(exc)
        image = equalize_adaptive(spmf.pixels, settings.ahe) if settings.enhance else spmf.pixels
        return e, image, spmf.raw, None

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        results = list(pool.map(work, items))

    used: dict[str, int] = {}
    rows = []
    for i, (e, image, raw, err) in enumerate(results):
        if err is not None:
            log.error("%s: %s", e.path, err)
            failures.append(e.path)
            continue
        name = _image_name(cfg["kind"], e, used)
        _write_png(out / f"{name}.png", image)
        rows.append((f"{name}.png", e, False))
        if raw is not None:
            (out / "raw").mkdir(exist_ok=True)
            Image.fromarray(raw).save(out / "raw" / f"{name}.ppm")
        for k in range(1, augment_copies + 1):
            copy = augment(image, aug_cfg, np.random.default_rng([cfg["seed"], i, k]))
            _write_png(out / f"{name}_aug{k}.png", copy)
            rows.append((f"{name}_aug{k}.png", e, True))
    with open(out / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_FIELDS)
        for path, e, augmented, in rows:
            w.writerow([path, e.label, e.subject, e.camera, e.trial, int(augmented), cfg["seed"]])
    (out / DATASET_FILE).write_text(json.dumps({
        "class_names": class_names,
        "stats": stats.to_dict(),
        "encode": settings.to_dict(),
        "seed": cfg["seed"],
    }, indent=2) + "\n")
    return len(rows)


def _class_names(manifest: DatasetManifest) -> list[str]:
    if manifest.class_names:
        return list(manifest.class_names)
    return [str(i) for i in range(manifest.num_classes)]


def _encode_dataset(cfg: dict, out: Path) -> list[str]:
    """Encode, fitting stats on the training portion; returns failed paths."""
    _require(cfg, "data")
    settings = _encode_settings(cfg)
    failures: list[str] = []
    manifest = _manifest(cfg, failures)
    if cfg.get("split"):
        train_e, test_e, names = _split_entries(cfg, manifest)
        parts = {"train": _load(train_e, cfg["kind"], failures), "test": _load(test_e, cfg["kind"], failures)}
    else:
        names = _class_names(manifest)
        parts = {"": _load(manifest.entries, cfg["kind"], failures)}
    if cfg.get("stats"):
        stats = NormalizationStats.from_json(_existing(cfg["stats"]).read_text())
    else:
        fit_on = parts.get("train", parts.get(""))
        if not fit_on:
            raise EspmfError("no readable training sequences")
        stats = compute_stats([smooth_sequence(s, settings.savgol) for _, s in fit_on])
    (out / "stats.json").parent.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(stats.to_json() + "\n")
    for part, items in parts.items():
        copies = cfg.get("augment", 0) if part in ("", "train") else 0
        n = _encode_split(items, stats, settings, cfg, out / part if part else out, copies, names, failures)
        log.info("encoded %d images into %s", n, out / part)
    return failures


def _load_images(directory) -> tuple[np.ndarray, np.ndarray, dict]:
    directory = _existing(directory)
    index = directory / "index.csv"
    if not index.exists():
        raise ConfigError(f"{directory} has no index.csv")
    with open(index, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{index} lists no images")
    images = np.stack([_read_png(directory / r["path"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    meta_path = directory / DATASET_FILE
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return images, labels, meta


# --- commands -----------------------------------------------------------------------

def cmd_synth(cfg: dict, out: Path) -> int:
    actions = [a.strip() for a in cfg["actions"].split(",") if a.strip()]
    unknown = [a for a in actions if a not in ACTIONS]
    if unknown or not actions:
        raise ConfigError(f"unknown actions {unknown}; choose from {', '.join(ACTIONS)}")
    seqs = make_corpus(actions, cfg["per_class"], cfg["seed"], noise=cfg["noise"])
    write_corpus(seqs, out)
    (out / "classes.txt").write_text("\n".join(actions) + "\n")
    log.info("wrote %d sequences to %s", len(seqs), out)
    return 0


def cmd_split(cfg: dict, out: Path) -> int:
    _require(cfg, "data")
    manifest = _manifest(cfg)
    train_e, test_e, names = _split_entries(cfg, manifest)
    write_manifest(DatasetManifest(train_e, names), out / "train.csv")
    write_manifest(DatasetManifest(test_e, names), out / "test.csv")
    log.info("%d train / %d test entries", len(train_e), len(test_e))
    return 0


def cmd_encode(cfg: dict, out: Path) -> int:
    failures = _encode_dataset(cfg, out)
    return 1 if failures else 0


def cmd_enhance(cfg: dict, out: Path) -> int:
    _require(cfg, "images")
    src = _existing(cfg["images"])
    if src.resolve() == out.resolve():
        raise ConfigError("--out must differ from --images")
    ahe = AheConfig(cfg["regions"])
    with open(_existing(src / "index.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        _write_png(out / r["path"], equalize_adaptive(_read_png(src / r["path"]), ahe))
    (out / "index.csv").write_bytes((src / "index.csv").read_bytes())
    if (src / DATASET_FILE).exists():
        meta = json.loads((src / DATASET_FILE).read_text())
        meta.setdefault("encode", {})["enhance"] = True
        meta["encode"]["ahe"] = {"regions": ahe.regions, "grid": list(ahe.grid)}
        (out / DATASET_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    log.info("enhanced %d images", len(rows))
    return 0


def _log_name(enhanced: bool) -> str:
    return "train_log.csv" if enhanced else "train_log_no_enhance.csv"


def _write_training_outputs(ck: Checkpoint, out: Path, enhanced: bool, val, train_data) -> dict:
    ck.save(out / "model.ckpt")
    with open(out / _log_name(enhanced), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_acc", "test_acc"])
        for h in ck.meta.get("history", []):
            w.writerow([h["epoch"], f"{h['loss']:.6f}", f"{h['train_acc']:.6f}",
                        "" if h["test_acc"] is None else f"{h['test_acc']:.6f}"])
    metrics = {
        "seed": ck.meta.get("seed"),
        "epoch": ck.meta.get("epoch"),
        "best_epoch": ck.meta.get("best_epoch"),
        "enhanced": enhanced,
        "train": evaluate(ck, *train_data).to_dict(),
    }
    if val is not None:
        metrics["test"] = evaluate(ck, *val).to_dict()
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    return metrics


def _enhanced_flag(cfg: dict, meta: dict) -> bool:
    enhanced = meta.get("encode", {}).get("enhance", True)
    if not cfg["enhance"] and enhanced:
        raise ConfigError("--no-enhance given but the images were encoded with enhancement; "
                          "re-encode with --no-enhance")
    return enhanced


def cmd_train(cfg: dict, out: Path) -> int:
    _require(cfg, "train")
    x, y, meta = _load_images(cfg["train"])
    val = _load_images(cfg["test"])[:2] if cfg.get("test") else None
    enhanced = _enhanced_flag(cfg, meta)
    stats = NormalizationStats.from_dict(meta["stats"]) if meta.get("stats") else None
    names = meta.get("class_names") or [str(i) for i in range(int(y.max()) + 1)]
    common = dict(epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"], val=val,
                  select_best=cfg["select_best"], stats=stats, class_names=names,
                  augment_config=AugmentConfig(seed=cfg["seed"]) if cfg["augment_online"] else None,
                  meta={"encode": meta.get("encode")})
    if cfg.get("resume"):
        init = Checkpoint.load(_existing(cfg["resume"]))
        ck = train(x, y, init=init, **common)
    else:
        config = NetworkConfig(cfg["depth"], num_classes=len(names))
        ck = train(x, y, config, lr=cfg["lr"], **common)
    m = _write_training_outputs(ck, out, enhanced, val, (x, y))
    log.info("train acc %.4f%s", m["train"]["accuracy"],
             f", test acc {m['test']['accuracy']:.4f}" if "test" in m else "")
    return 0


def cmd_eval(cfg: dict, out: Path) -> int:
    _require(cfg, "checkpoint", "images")
    ck = Checkpoint.load(_existing(cfg["checkpoint"]))
    x, y, _ = _load_images(cfg["images"])
    result = evaluate(ck, x, y)
    (out / "metrics.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    log.info("accuracy %.4f", result.accuracy)
    return 0


def cmd_finetune(cfg: dict, out: Path) -> int:
    _require(cfg, "checkpoint", "train")
    base = Checkpoint.load(_existing(cfg["checkpoint"]))
    x, y, meta = _load_images(cfg["train"])
    val = _load_images(cfg["test"])[:2] if cfg.get("test") else None
    enhanced = _enhanced_flag(cfg, meta)
    names = meta.get("class_names") or [str(i) for i in range(int(y.max()) + 1)]
    ck = fine_tune(base, x, y, num_classes=len(names), epochs=cfg["epochs"],
                   batch_size=cfg["batch_size"], seed=cfg["seed"], val=val,
                   select_best=cfg["select_best"], class_names=names)
    _write_training_outputs(ck, out, enhanced, val, (x, y))
    return 0


def cmd_benchmark(cfg: dict, out: Path) -> int:
    settings = _encode_settings(cfg)
    if cfg.get("data"):
        seqs = [s for _, s in _load(_manifest(cfg).entries, cfg["kind"], [])]
    else:
        seqs = make_corpus(["right_wave", "bend", "right_kick"], 10, cfg["seed"])
    if cfg.get("checkpoint"):
        model = Checkpoint.load(_existing(cfg["checkpoint"]))
        stats = model.stats
        net = model.build_network()
    else:
        net = DenseNet(NetworkConfig(cfg["depth"], 3), rng=np.random.default_rng(cfg["seed"]))
        stats = None
    if stats is None:
        stats = compute_stats([smooth_sequence(s, settings.savgol) for s in seqs])
    report = run_benchmark(seqs, net, stats, settings, cfg["warmup"], cfg["runs"], threads=1)
    (out / "benchmark.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    total = report.stages["total"]
    print(f"mean {total.mean_ms:.1f} ms, p95 {total.p95_ms:.1f} ms per sequence "
          f"({report.sequences_per_sec:.1f} seq/s, single thread)")
    return 0


def cmd_pipeline(cfg: dict, out: Path) -> int:
    enc_cfg = {**cfg, "stats": None, "dump_raw": False}
    failures = _encode_dataset(enc_cfg, out / "images")
    train_cfg = {**cfg, "train": out / "images" / "train", "test": out / "images" / "test",
                 "resume": None, "augment_online": False}
    (out / "model").mkdir(parents=True, exist_ok=True)
    cmd_train(train_cfg, out / "model")
    return 1 if failures else 0


COMMANDS = {
    "synth": cmd_synth, "split": cmd_split, "encode": cmd_encode, "enhance": cmd_enhance,
    "train": cmd_train, "eval": cmd_eval, "finetune": cmd_finetune, "benchmark": cmd_benchmark,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    verbosity = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.DEBUG if verbosity > 1 else logging.INFO if verbosity else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args.command, args)
        out = Path(cfg["out"])
        _echo_config(cfg, args.command, out)
        with threadpool_limits(limits=cfg["threads"]):
            return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"espmf: configuration error: {exc}", file=sys.stderr)
        return 2
    except (EspmfError, OSError) as exc:
        print(f"espmf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
