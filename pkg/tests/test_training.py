import math

import numpy as np
import pytest

from espmf.classifier import (Checkpoint, NetworkConfig, evaluate, fine_tune, train)
from espmf.classifier.tensor import Tensor
from espmf.enhance import AugmentConfig
from espmf.errors import ConfigError, TrainingError

SMALL = NetworkConfig(depth=7, num_classes=2, growth_rate=4, init_channels=4)


def toy_images(n_per_class, classes, seed=0, size=16):
    """Class c is a bright horizontal band at a class-specific height."""
    rng = np.random.default_rng(seed)
    imgs, labels = [], []
    for c in range(classes):
        for _ in range(n_per_class):
            img = rng.integers(0, 60, (size, size, 3))
            band = (c * size) // classes
            img[band:band + size // classes] += 180
            imgs.append(img.astype(np.uint8))
            labels.append(c)
    return np.stack(imgs), np.array(labels)


def test_initial_loss_is_log_classes():
    x, y = toy_images(3, 4)
    ck = train(x, y, NetworkConfig(7, 4, 4, 4), epochs=0)
    assert ck.meta["history"][0]["loss"] == pytest.approx(math.log(4), abs=1e-6)


def test_deterministic_replay():
    x, y = toy_images(4, 2)
    a = train(x, y, SMALL, epochs=3, batch_size=4, seed=5)
    b = train(x, y, SMALL, epochs=3, batch_size=4, seed=5)
    assert a.meta["history"] == b.meta["history"]
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_learns_toy_problem():
    x, y = toy_images(6, 2)
    ck = train(x, y, SMALL, epochs=40, batch_size=6, seed=0, lr=3e-3)
    assert evaluate(ck, x, y).accuracy == 1.0


def test_resume_matches_uninterrupted():
    x, y = toy_images(4, 2)
    full = train(x, y, SMALL, epochs=4, batch_size=4, seed=1)
    half = train(x, y, SMALL, epochs=2, batch_size=4, seed=1)
    resumed = train(x, y, init=half, epochs=2, batch_size=4, seed=1)
    assert resumed.meta["epoch"] == 4
    assert [h["epoch"] for h in resumed.meta["history"]] == [0, 1, 2, 3, 4]
    for k in full.params:
        np.testing.assert_allclose(resumed.params[k], full.params[k], rtol=0, atol=0)


def test_resume_through_file(tmp_path):
    x, y = toy_images(4, 2)
    half = train(x, y, SMALL, epochs=2, batch_size=4, seed=1)
    half.save(tmp_path / "h.ckpt")
    resumed = train(x, y, init=Checkpoint.load(tmp_path / "h.ckpt"), epochs=1, batch_size=4, seed=1)
    assert resumed.meta["history"][-1]["epoch"] == 3


def test_best_validation_snapshot():
    x, y = toy_images(4, 2)
    ck = train(x, y, SMALL, epochs=5, batch_size=4, val=(x, y))
    accs = [h["test_acc"] for h in ck.meta["history"][1:]]
    best = int(np.argmax(accs)) + 1
    assert ck.meta["best_epoch"] == best
    assert evaluate(ck, x, y).accuracy == max(accs)


def test_augmented_training_runs():
    x, y = toy_images(3, 2)
    ck = train(x, y, SMALL, epochs=2, batch_size=3, augment_config=AugmentConfig(seed=2))
    assert len(ck.meta["history"]) == 3


def test_evaluate_bookkeeping():
    x, y = toy_images(5, 3)
    ck = train(x, y, NetworkConfig(7, 3, 4, 4), epochs=0)
    res = evaluate(ck, x, y)
    # zero head: every logit ties and argmax picks class 0
    assert res.accuracy == pytest.approx(np.mean(y == 0))
    assert res.confusion.sum(axis=1).tolist() == [5, 5, 5]
    assert np.trace(res.confusion) / len(y) == res.accuracy
    assert res.per_class.tolist() == [1.0, 0.0, 0.0]


def test_evaluate_absent_class_is_nan():
    x, y = toy_images(2, 2)
    ck = train(x, y, NetworkConfig(7, 3, 4, 4), epochs=0)
    res = evaluate(ck, x, y)
    assert np.isnan(res.per_class[2])
    assert res.to_dict()["per_class_accuracy"][2] is None


def test_errors():
    x, y = toy_images(2, 2)
    with pytest.raises(TrainingError):
        train(x[:0], y[:0], SMALL)
    with pytest.raises(TrainingError):
        train(x, y[:-1], SMALL)
    with pytest.raises(TrainingError):
        train(x, y + 5, SMALL)
    with pytest.raises(ConfigError):
        train(x, y)
    ck = train(x, y, SMALL, epochs=0)
    with pytest.raises(ConfigError):
        evaluate(ck, x, y + 3)


def test_nan_loss_aborts():
    x, y = toy_images(2, 2)
    ck = train(x, y, SMALL, epochs=0)
    ck.params["head.weight"][...] = np.nan
    with pytest.raises(TrainingError, match="non-finite loss"):
        train(x, y, init=ck, epochs=1)


class TestFineTune:
    def test_zero_epochs_keeps_body(self):
        x, y = toy_images(4, 2)
        ck = train(x, y, SMALL, epochs=3, batch_size=4)
        ft = fine_tune(ck, x, y, num_classes=2, epochs=0)
        for k in ck.params:
            if k.startswith("head."):
                assert np.all(ft.params[k] == 0)
            else:
                np.testing.assert_array_equal(ft.params[k], ck.params[k])
        for k in ck.buffers:
            np.testing.assert_array_equal(ft.buffers[k], ck.buffers[k])
        # body features are identical, so only the head differs
        inp = Tensor(x.transpose(0, 3, 1, 2) / 255.0)
        np.testing.assert_array_equal(ck.build_network().features(inp.data.astype(np.float32)).data,
                                      ft.build_network().features(inp.data.astype(np.float32)).data)

    def test_new_head_size_and_fresh_optimizer(self):
        x, y = toy_images(4, 3)
        ck = train(x, y, NetworkConfig(7, 3, 4, 4), epochs=2, batch_size=4)
        x2, y2 = toy_images(3, 2, seed=1)
        ft = fine_tune(ck, x2, y2, num_classes=2, epochs=2, batch_size=3)
        assert ft.config.num_classes == 2
        assert ft.params["head.weight"].shape == (2, ck.params["head.weight"].shape[1])
        assert ft.optimizer.t == 4 and ft.optimizer.lr == ck.optimizer.lr  # 2 epochs x 2 batches
        assert [h["epoch"] for h in ft.meta["history"]] == [0, 1, 2]
