"""Densely connected network for 32x32 colour inputs.

Layout: a 3x3 stem convolution, three dense blocks joined by two
transitions, then BN-ELU, global average pooling and a linear head.  Each
dense layer is BN -> ELU -> 3x3 conv (``growth_rate`` maps) -> dropout and
sees the concatenation of the block input and every earlier layer output.
Depth counts the stem, all dense-layer convs, the two transition convs and
the head, so ``layers_per_block = (depth - 4) / 3``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from ..errors import ConfigError
from .tensor import (Tensor, avg_pool2, batch_norm, concat, conv2d, dropout, elu,
                     global_avg_pool, linear)

HEAD_PREFIX = "head."


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 16
    num_classes: int = 2
    growth_rate: int = 12
    init_channels: int = 16
    dropout: float = 0.2
    elu_alpha: float = 1.0
    blocks: int = 3

    def __post_init__(self) -> None:
        if self.depth < 4 or (self.depth - 4) % self.blocks:
            raise ConfigError(f"depth {self.depth}: (depth - 4) must be a positive multiple of {self.blocks}")
        if self.growth_rate < 1 or self.init_channels < 1:
            raise ConfigError("growth rate and stem width must be positive")
        if self.num_classes < 1:
            raise ConfigError("need at least one class")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout rate must be in [0, 1)")

    @property
    def layers_per_block(self) -> int:
        return (self.depth - 4) // self.blocks

    def channels_after_block(self, b: int) -> int:
        """Channel count leaving block ``b`` (1-based); transitions keep channels."""
        return self.init_channels + b * self.layers_per_block * self.growth_rate

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def he_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Walks attributes to find parameters (Tensors) and buffers (arrays)."""

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, list):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item
            else:
                yield name, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Tensor):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng: np.random.Generator, dtype=np.float32):
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(he_normal((out_channels, in_channels, kernel, kernel), fan_in, rng, dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._momentum = momentum
        self._eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                          training, self._momentum, self._eps)


class DenseLayer(Module):
    def __init__(self, in_channels: int, config: NetworkConfig, rng, dtype):
        self.bn = BatchNorm2d(in_channels, dtype)
        self.conv = Conv2d(in_channels, config.growth_rate, 3, rng, dtype)
        self._alpha = config.elu_alpha
        self._rate = config.dropout

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        h = self.conv(elu(self.bn(x, training), self._alpha))
        return dropout(h, self._rate, rng, training)


class DenseBlock(Module):
    def __init__(self, in_channels: int, config: NetworkConfig, rng, dtype):
        k = config.growth_rate
        self.layers = [DenseLayer(in_channels + i * k, config, rng, dtype)
                       for i in range(config.layers_per_block)]

    def __call__(self, x: Tensor, training: bool, rng) -> Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer(concat(features), training, rng))
        return concat(features)


class Transition(Module):
    """BN -> ELU -> 1x1 conv (channel count kept) -> 2x2 average pool."""

    def __init__(self, channels: int, config: NetworkConfig, rng, dtype):
        self.bn = BatchNorm2d(channels, dtype)
        self.conv = Conv2d(channels, channels, 1, rng, dtype)
        self._alpha = config.elu_alpha

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return avg_pool2(self.conv(elu(self.bn(x, training), self._alpha)))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, dtype=np.float32):
        # zero weights: every class starts equally likely
        self.weight = Tensor(np.zeros((out_features, in_features), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


def dense_block(x: Tensor, block: DenseBlock, training: bool = False, rng=None) -> Tensor:
    return block(x, training, rng)


def transition(x: Tensor, layer: Transition, training: bool = False) -> Tensor:
    return layer(x, training)


class DenseNet(Module):
    def __init__(self, config: NetworkConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32, in_channels: int = 3):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.stem = Conv2d(in_channels, config.init_channels, 3, rng, dtype)
        self.blocks, self.transitions = [], []
        channels = config.init_channels
        for b in range(config.blocks):
            self.blocks.append(DenseBlock(channels, config, rng, dtype))
            channels += config.layers_per_block * config.growth_rate
            if b < config.blocks - 1:
                self.transitions.append(Transition(channels, config, rng, dtype))
        self.final_bn = BatchNorm2d(channels, dtype)
        self.head = Linear(channels, config.num_classes, dtype)
        self.feature_channels = channels

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.named_buffers())

    def reset_head(self, num_classes: int) -> None:
        self.head = Linear(self.feature_channels, num_classes, self.dtype)
        self.config = NetworkConfig(**{**self.config.to_dict(), "num_classes": num_classes})

    def features(self, x, training: bool = False, rng=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        h = self.stem(x)
        for b, block in enumerate(self.blocks):
            h = dense_block(h, block, training, rng)
            if b < len(self.transitions):
                h = transition(h, self.transitions[b], training)
        h = elu(self.final_bn(h, training), self.config.elu_alpha)
        return global_avg_pool(h)

    def forward(self, x, training: bool = False, rng=None) -> Tensor:
        """Logits for an ``(N, C, H, W)`` batch."""
        return self.head(self.features(x, training, rng))

    __call__ = forward

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], skip_head: bool = False) -> None:
        params, buffers = self.parameters(), self.buffers()
        for name, target in list(params.items()) + list(buffers.items()):
            if skip_head and name.startswith(HEAD_PREFIX):
                continue
            if name not in state:
                raise KeyError(f"missing tensor {name}")
            value = np.asarray(state[name])
            arr = target.data if isinstance(target, Tensor) else target
            if value.shape != arr.shape:
                raise ConfigError(f"{name}: shape {value.shape} does not match {arr.shape}")
            arr[...] = value
