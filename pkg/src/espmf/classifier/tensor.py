"""A small reverse-mode autodiff core over numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
propagating the output gradient to them.  Only the handful of ops the
densely connected network needs are provided.  Layout is NCHW throughout.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: Sequence["Tensor"] = (), _backward: Callable | None = None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor; leaf tensors keep their ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if p.requires_grad)
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # intermediate results do not keep gradients
                node._backward = None
                node._parents = ()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


# --- convolution ----------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Pixel-major column matrix ``(N*H*W, k*k*C)`` for a stride-1 'same' convolution.

    Column order is (kernel row, kernel column, channel).
    """
    n, c, h, w = x.shape
    xt = x.transpose(0, 2, 3, 1)
    if k == 1:
        return xt.reshape(n * h * w, c)
    pad = k // 2
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + h, pad:pad + w] = xt
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # n, h, w, c, k, k
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 convolution with 'same' zero padding for odd square kernels."""
    n, c, h, wd = x.shape
    out_c, in_c, kh, kw = w.shape
    if in_c != c or kh != kw or kh % 2 == 0:
        raise ShapeError(f"cannot convolve input {x.shape} with kernel {w.shape}")
    if b is not None and b.shape != (out_c,):
        raise ShapeError(f"bias shape {b.shape} does not match {out_c} output channels")
    k = kh
    cols = _im2col(x.data, k)
    wmat = w.data.transpose(2, 3, 1, 0).reshape(k * k * c, out_c)
    out = cols @ wmat
    if b is not None:
        out += b.data
    out = out.reshape(n, h, wd, out_c).transpose(0, 3, 1, 2)

    def backward(g: np.ndarray) -> None:
        gm = g.transpose(0, 2, 3, 1).reshape(-1, out_c)
        if w.requires_grad:
            gw = cols.T @ gm
            w._accumulate(gw.reshape(k, k, c, out_c).transpose(3, 2, 0, 1))
        if b is not None and b.requires_grad:
            b._accumulate(gm.sum(axis=0))
        if x.requires_grad:
            # input gradient = 'same' convolution of g with the flipped, transposed kernel
            flipped = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(k * k * out_c, c)
            gx = _im2col(g, k) @ flipped
            x._accumulate(gx.reshape(n, h, wd, c).transpose(0, 3, 1, 2))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


# --- normalisation and activations ------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.9,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over N, H, W.

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch norm parameters do not match {c} channels")
    m = x.data.size // c
    if training:
        mean = np.einsum("nchw->c", x.data) / m
        xhat = x.data - mean[:, None, None]
        var = np.einsum("nchw,nchw->c", xhat, xhat) / m
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        xhat = x.data - mean[:, None, None]
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat *= inv[:, None, None]
    out = xhat * gamma.data[:, None, None]
    out += beta.data[:, None, None]

    def backward(g: np.ndarray) -> None:
        gsum = np.einsum("nchw->c", g)
        gdot = np.einsum("nchw,nchw->c", g, xhat)
        if gamma.requires_grad:
            gamma._accumulate(gdot)
        if beta.requires_grad:
            beta._accumulate(gsum)
        if x.requires_grad:
            scale = gamma.data * inv
            if training:
                gx = g * scale[:, None, None]
                gx -= xhat * (scale * gdot / m)[:, None, None]
                gx -= (scale * gsum / m)[:, None, None]
            else:
                gx = g * scale[:, None, None]
            x._accumulate(gx)

    return Tensor(out, _parents=(x, gamma, beta), _backward=backward)


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    neg = np.minimum(x.data, 0)
    np.expm1(neg, out=neg)
    if alpha != 1.0:
        neg *= alpha
    out = np.maximum(x.data, 0)
    out += neg  # neg is exactly 0 where x > 0

    def backward(g: np.ndarray) -> None:
        slope = neg + np.asarray(alpha, dtype=x.dtype)
        if alpha != 1.0:
            slope += (1.0 - alpha) * (x.data > 0)
        slope *= g
        x._accumulate(slope)

    return Tensor(out, _parents=(x,), _backward=backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate`` is 0."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) * scale

    def backward(g: np.ndarray) -> None:
        x._accumulate(g * mask)

    return Tensor(x.data * mask, _parents=(x,), _backward=backward)


# --- shape ops ------------------------------------------------------------------

def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(tensors) == 1:
        return tensors[0]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor(out, _parents=tuple(tensors), _backward=backward)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling, stride 2; odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise ShapeError(f"cannot pool a {h}x{w} map")
    d = x.data
    out = d[:, :, 0:2 * h2:2, 0:2 * w2:2] + d[:, :, 1:2 * h2:2, 0:2 * w2:2]
    out += d[:, :, 0:2 * h2:2, 1:2 * w2:2]
    out += d[:, :, 1:2 * h2:2, 1:2 * w2:2]
    out *= np.asarray(0.25, dtype=d.dtype)

    def backward(g: np.ndarray) -> None:
        gx = np.zeros_like(d)
        q = g * np.asarray(0.25, dtype=d.dtype)
        for i in (0, 1):
            for j in (0, 1):
                gx[:, :, i:2 * h2:2, j:2 * w2:2] = q
        x._accumulate(gx)

    return Tensor(out, _parents=(x,), _backward=backward)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g: np.ndarray) -> None:
        x._accumulate(np.broadcast_to(g[:, :, None, None] / (h * w), x.shape))

    return Tensor(out, _parents=(x,), _backward=backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` shaped ``(out, in)``."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"cannot apply {w.shape} weights to {x.shape} input")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g: np.ndarray) -> None:
        if w.requires_grad:
            w._accumulate(g.T @ x.data)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=0))
        if x.requires_grad:
            x._accumulate(g @ w.data)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, _parents=parents, _backward=backward)


# --- loss -----------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _targets(labels: np.ndarray, n: int, c: int, dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, c):
            raise ShapeError(f"one-hot targets {labels.shape} do not match logits ({n}, {c})")
        return labels.astype(dtype)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ShapeError(f"labels outside [0, {c})")
    y = np.zeros((n, c), dtype=dtype)
    y[np.arange(n), labels] = 1
    return y


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over the batch; ``labels`` are indices or one-hot rows."""
    n, c = logits.shape
    y = _targets(labels, n, c, logits.dtype)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -(y * log_p).sum() / n

    def backward(g: np.ndarray) -> None:
        logits._accumulate(g * (np.exp(log_p) - y) / n)

    return Tensor(np.asarray(loss, dtype=logits.dtype), _parents=(logits,), _backward=backward)
