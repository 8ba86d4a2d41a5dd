import numpy as np
import pytest

from espmf.classifier.tensor import (Tensor, avg_pool2, batch_norm, concat, conv2d, dropout, elu,
                                    global_avg_pool, linear, softmax_cross_entropy)
from espmf.errors import ShapeError


def conv_loops(x, w, b):
    """Six-loop 'same' convolution oracle."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for y in range(h):
                for xx in range(wd):
                    s = b[oi]
                    for ci in range(c):
                        for i in range(k):
                            for j in range(k):
                                yy, xj = y + i - p, xx + j - p
                                if 0 <= yy < h and 0 <= xj < wd:
                                    s += x[ni, ci, yy, xj] * w[oi, ci, i, j]
                    out[ni, oi, y, xx] = s
    return out


def numeric_grad(f, arr, eps=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        hi = f()
        arr[i] = old - eps
        lo = f()
        arr[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, tensors, probe, atol=1e-6, rtol=1e-5):
    """Compare analytic gradients of ``sum(build() * probe)`` with central differences."""
    for t in tensors:
        t.grad = None
    out = build()
    (out.data * probe).sum()
    out.backward(probe.astype(out.dtype))
    for t in tensors:
        num = numeric_grad(lambda: float((build().data * probe).sum()), t.data)
        np.testing.assert_allclose(t.grad, num, atol=atol, rtol=rtol)


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestConv:
    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_forward_matches_loops(self, k):
        rng = np.random.default_rng(k)
        x, w, b = rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, conv_loops(x, w, b), atol=1e-12)

    @pytest.mark.parametrize("k", [1, 3])
    def test_gradients(self, k):
        rng = np.random.default_rng(10 + k)
        x, w, b = leaf(rng, 2, 3, 4, 5), leaf(rng, 2, 3, k, k), leaf(rng, 2)
        check_grads(lambda: conv2d(x, w, b), [x, w, b], rng.normal(size=(2, 2, 4, 5)))

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))))
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 3, 2, 2))))


class TestBatchNorm:
    def test_standardized_input_passes(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(8, 3, 4, 4))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out = batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True)
        # eps = 1e-5 scales the output by 1/sqrt(1 + eps)
        np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), atol=1e-12)
        np.testing.assert_allclose(out.data, x, rtol=1e-5)

    def test_running_update(self):
        x = np.arange(2 * 2 * 2 * 2, dtype=float).reshape(2, 2, 2, 2)
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        mean = x.mean(axis=(0, 2, 3))
        np.testing.assert_allclose(rm, 0.1 * mean)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)))

    def test_eval_uses_running(self):
        x = np.full((1, 1, 2, 2), 3.0)
        out = batch_norm(Tensor(x), Tensor(np.array([2.0])), Tensor(np.array([1.0])),
                         np.array([1.0]), np.array([4.0]), False)
        np.testing.assert_allclose(out.data, 2.0 * 2.0 / np.sqrt(4.0 + 1e-5) + 1.0)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(3)
        x, g, b = leaf(rng, 3, 2, 3, 3), leaf(rng, 2), leaf(rng, 2)
        rm, rv = rng.normal(size=2), rng.uniform(0.5, 2, 2)

        def build():
            return batch_norm(x, g, b, rm.copy(), rv.copy(), training)

        check_grads(build, [x, g, b], rng.normal(size=(3, 2, 3, 3)))


class TestPointwise:
    def test_elu_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
        np.testing.assert_allclose(elu(Tensor(x)).data, np.where(x > 0, x, np.expm1(x)))
        np.testing.assert_allclose(elu(Tensor(x), 0.5).data, np.where(x > 0, x, 0.5 * np.expm1(x)))

    @pytest.mark.parametrize("alpha", [1.0, 0.7])
    def test_elu_gradient(self, alpha):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 7)) + 0.05, requires_grad=True)
        check_grads(lambda: elu(x, alpha), [x], rng.normal(size=(3, 7)))

    def test_dropout(self):
        x = Tensor(np.ones((100, 100)), requires_grad=True)
        assert dropout(x, 0.2, None, training=False) is x
        out = dropout(x, 0.2, np.random.default_rng(0), training=True)
        kept = out.data != 0
        assert abs(kept.mean() - 0.8) < 0.02
        np.testing.assert_allclose(out.data[kept], 1.25)
        out.backward(np.ones((100, 100)))
        np.testing.assert_array_equal(x.grad, out.data)

    def test_pool_and_concat_and_linear_gradients(self):
        rng = np.random.default_rng(5)
        a, b = leaf(rng, 2, 2, 4, 6), leaf(rng, 2, 3, 4, 6)
        check_grads(lambda: avg_pool2(concat([a, b])), [a, b], rng.normal(size=(2, 5, 2, 3)))
        check_grads(lambda: global_avg_pool(a), [a], rng.normal(size=(2, 2)))
        x, w, bias = leaf(rng, 4, 3), leaf(rng, 2, 3), leaf(rng, 2)
        check_grads(lambda: linear(x, w, bias), [x, w, bias], rng.normal(size=(4, 2)))

    def test_avg_pool_values(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        np.testing.assert_allclose(avg_pool2(Tensor(x)).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


class TestLoss:
    def test_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((5, 4))), np.array([0, 1, 2, 3, 0]))
        assert float(loss.data) == pytest.approx(np.log(4))

    def test_one_hot_equals_indices(self):
        rng = np.random.default_rng(6)
        z = rng.normal(size=(3, 5))
        y = np.array([4, 0, 2])
        a = softmax_cross_entropy(Tensor(z), y).data
        b = softmax_cross_entropy(Tensor(z), np.eye(5)[y]).data
        assert a == pytest.approx(b)

    def test_large_logits_finite(self):
        loss = softmax_cross_entropy(Tensor(np.array([[1e4, 0.0, -1e4]])), np.array([1]))
        assert np.isfinite(loss.data) and float(loss.data) == pytest.approx(1e4)

    def test_gradient(self):
        rng = np.random.default_rng(7)
        z = leaf(rng, 4, 3)
        y = np.array([2, 0, 1, 1])
        check_grads(lambda: softmax_cross_entropy(z, y), [z], np.array(1.0))

    def test_bad_labels(self):
        with pytest.raises(ShapeError):
            softmax_cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_shared_subexpression_accumulates():
    rng = np.random.default_rng(8)
    x = leaf(rng, 2, 3)
    check_grads(lambda: concat([elu(x), x], axis=1), [x], rng.normal(size=(2, 6)))
