"""Training, evaluation and fine-tuning of the dense network."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..enhance import AugmentConfig, augment
from ..errors import ConfigError, TrainingError
from ..preproc import NormalizationStats
from .checkpoint import Checkpoint
from .network import DenseNet, NetworkConfig
from .optim import OptimizerState, adam_step
from .tensor import Tensor, softmax, softmax_cross_entropy

log = logging.getLogger(__name__)


def images_to_input(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """``(M, H, W, 3)`` bytes -> ``(M, 3, H, W)`` floats in [0, 1]."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ConfigError(f"expected (M, H, W, 3) images, got {images.shape}")
    return (images.transpose(0, 3, 1, 2) / 255.0).astype(dtype)


def _rng(seed: int, stream: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, epoch])


def predict_logits(net: DenseNet, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    x = images_to_input(images, net.dtype)
    out = [net.forward(Tensor(x[i:i + batch_size])).data for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, net.config.num_classes), net.dtype)


@dataclass
class EvalResult:
    accuracy: float
    per_class: np.ndarray
    confusion: np.ndarray
    loss: float
    predictions: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "loss": self.loss,
            "per_class_accuracy": [None if math.isnan(a) else a for a in self.per_class.tolist()],
            "confusion": self.confusion.tolist(),
        }


def evaluate(model: Checkpoint | DenseNet, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 128) -> EvalResult:
    """Accuracy, per-class accuracy (NaN for absent classes) and confusion matrix."""
    net = model.build_network() if isinstance(model, Checkpoint) else model
    labels = np.asarray(labels, dtype=np.int64)
    c = net.config.num_classes
    if len(labels) == 0:
        raise ConfigError("cannot evaluate on an empty set")
    if labels.min() < 0 or labels.max() >= c:
        raise ConfigError(f"labels span {labels.max() + 1} classes but the network has {c}")
    logits = predict_logits(net, images, batch_size).astype(np.float64)
    pred = logits.argmax(axis=1)
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(support > 0, np.diag(confusion) / np.maximum(support, 1), np.nan)
    p = softmax(logits)
    loss = float(-np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300))))
    return EvalResult(float(np.trace(confusion) / len(labels)), per_class, confusion, loss, pred)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None = None

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "loss": self.loss, "train_acc": self.train_acc,
                "test_acc": self.test_acc}


def train(
    images: np.ndarray,
    labels: np.ndarray,
    config: NetworkConfig | None = None,
    *,
    epochs: int = 250,
    batch_size: int = 64,
    seed: int = 0,
    lr: float = 3e-4,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    select_best: bool = True,
    augment_config: AugmentConfig | None = None,
    init: Checkpoint | None = None,
    stats: NormalizationStats | None = None,
    class_names: list[str] | None = None,
    dtype=np.float32,
    meta: dict | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> Checkpoint:
    """Train from scratch (``config``) or continue from ``init``.

    Continuing keeps the optimizer state and epoch count of ``init``.  With
    ``val`` the returned checkpoint is the epoch with the best validation
    accuracy (earliest on ties) unless ``select_best`` is off.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise TrainingError("empty training set")
    if len(images) != len(labels):
        raise TrainingError(f"{len(images)} images but {len(labels)} labels")
    if init is not None:
        net = init.build_network(dtype)
        state = init.optimizer or OptimizerState(lr=lr)
        start = int(init.meta.get("epoch", 0))
        history = list(init.meta.get("history", []))
        stats = stats or init.stats
        class_names = class_names or init.class_names
    else:
        if config is None:
            raise ConfigError("train() needs a network config or an initial checkpoint")
        net = DenseNet(config, rng=_rng(seed, 0), dtype=dtype)
        state = OptimizerState(lr=lr)
        start, history = 0, []
    if labels.max() >= net.config.num_classes:
        raise TrainingError(f"labels exceed the {net.config.num_classes}-way head")
    x_all = images_to_input(images, dtype)
    base_meta = {**(init.meta if init else {}), **(meta or {}), "seed": seed}

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint.from_network(
            net, state, stats, class_names,
            {**base_meta, "epoch": epoch, "history": [dict(h) for h in history]},
        )

    def record(rec: EpochRecord) -> None:
        history.append(rec.to_dict())
        log.info("epoch %d loss %.4f train_acc %.4f test_acc %s", rec.epoch, rec.loss,
                 rec.train_acc, "-" if rec.test_acc is None else f"{rec.test_acc:.4f}")
        if on_epoch is not None:
            on_epoch(rec)

    if start == 0:
        first = evaluate(net, images, labels)
        record(EpochRecord(0, first.loss, first.accuracy,
                           evaluate(net, *val).accuracy if val is not None else None))
    best = snapshot(start)
    best_acc = -1.0
    n = len(labels)
    params = net.parameters()
    for epoch in range(start + 1, start + epochs + 1):
        order = _rng(seed, 1, epoch).permutation(n)
        drop_rng = _rng(seed, 2, epoch)
        total_loss, correct = 0.0, 0
        for b, lo in enumerate(range(0, n, batch_size)):
            idx = order[lo:lo + batch_size]
            if augment_config is not None:
                batch = np.stack([
                    augment(images[i], augment_config,
                            np.random.default_rng([augment_config.seed, epoch, int(i)]))
                    for i in idx
                ])
                x = images_to_input(batch, dtype)
            else:
                x = x_all[idx]
            y = labels[idx]
            net.zero_grad()
            logits = net.forward(Tensor(x), training=True, rng=drop_rng)
            loss = softmax_cross_entropy(logits, y)
            value = float(loss.data)
            if not math.isfinite(value):
                worst = max(float(np.abs(p.data).max()) for p in params.values())
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b} (max |weight| = {worst:.3g})"
                )
            total_loss += value * len(idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            loss.backward()
            adam_step({k: p.data for k, p in params.items()},
                      {k: p.grad for k, p in params.items() if p.grad is not None}, state)
        test_acc = evaluate(net, *val).accuracy if val is not None else None
        record(EpochRecord(epoch, total_loss / n, correct / n, test_acc))
        if val is not None and select_best and test_acc > best_acc:
            best_acc = test_acc
            best = snapshot(epoch)
    final = snapshot(start + epochs)
    if val is not None and select_best:
        best.meta["history"] = final.meta["history"]
        best.meta["best_epoch"] = best.meta["epoch"]
        best.meta["epoch"] = final.meta["epoch"]
        return best
    return final


def fine_tune(checkpoint: Checkpoint, images: np.ndarray, labels: np.ndarray, num_classes: int,
              epochs: int, **kwargs) -> Checkpoint:
    """Reload every tensor except the classification head, which restarts at zero.

    Training starts a fresh optimizer with the same constants and a new
    epoch count.
    """
    if checkpoint.version != 1:
        raise ConfigError(f"cannot fine-tune from checkpoint version {checkpoint.version}")
    net = DenseNet(NetworkConfig(**{**checkpoint.config.to_dict(), "num_classes": num_classes}))
    state = {**checkpoint.params, **checkpoint.buffers}
    net.load_state_dict(state, skip_head=True)
    lr = checkpoint.optimizer.lr if checkpoint.optimizer else kwargs.pop("lr", 3e-4)
    kwargs.pop("lr", None)
    start = Checkpoint.from_network(
        net, OptimizerState(lr=lr), checkpoint.stats, kwargs.pop("class_names", None),
        {"fine_tuned_from_epoch": checkpoint.meta.get("epoch", 0)},
    )
    start.optimizer = OptimizerState(lr=lr)
    return train(images, labels, init=start, epochs=epochs, **kwargs)
