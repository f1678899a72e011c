"""Layer building blocks on top of :mod:`mvsc.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Minimal container that discovers parameters by attribute walk.

    Attribute insertion order fixes parameter order, which in turn fixes the
    checkpoint layout.
    """

    training = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_") or key == "training":
                continue
            yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{key}", getattr(self, key)
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Module):
                value.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"missing entries in state: {sorted(missing)}")
        for name, p in expected.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data = value.copy()
        for name in buffers:
            owner, attr = self._resolve(name)
            setattr(owner, attr, np.asarray(state[name], dtype=np.float64).copy())

    def _resolve(self, dotted: str):
        parts = dotted.split(".")
        owner = self
        for part in parts[:-1]:
            owner = getattr(owner, part)
        return owner, parts[-1]


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """``y = x @ weight + bias`` with weight laid out (in, out)."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 bias: bool = True, zero_init: bool = False):
        if zero_init or rng is None:
            w = np.zeros((d_in, d_out))
        else:
            w = uniform_fan_in(rng, d_in, (d_in, d_out))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.ndim == 1:
            out = T.reshape(T.matmul(T.reshape(x, (1, -1)), self.weight), (self.weight.shape[1],))
        else:
            out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.weight, self.bias, self.eps)


class BatchNorm1d(Module):
    """Batch normalization over axis 0 with running statistics for eval mode."""

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, n: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = Parameter(np.ones(n))
        self.bias = Parameter(np.zeros(n))
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            mu = T.mean(x, 0, keepdims=True)
            centered = x - mu
            variance = T.mean(centered * centered, 0, keepdims=True)
            batch = x.shape[0]
            unbiased = variance.data[0] * (batch / (batch - 1)) if batch > 1 else variance.data[0]
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1 - m) * self.running_var + m * unbiased
            normed = centered / T.sqrt(variance + self.eps)
        else:
            normed = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return normed * self.weight + self.bias


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    x = T.reshape(x, tuple(lead) + (t, heads, d // heads))
    return T.swapaxes(x, -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    x = T.swapaxes(x, -2, -3)
    *lead, t, h, dh = x.shape
    return T.reshape(x, tuple(lead) + (t, h * dh))


class MultiHeadAttention(Module):
    """Pre-norm multi-head attention.

    ``residual=True`` adds the raw query back to the output (used for
    self-attention); cross-attention blocks return the attention output alone
    so that every output row is an output-projected convex combination of
    value-projected context rows. The key projection carries no bias: a
    shared key offset cannot change softmax weights.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, cross: bool = False,
                 residual: bool = False):
        if heads < 1 or d % heads:
            raise ShapeError(f"d={d} is not divisible into {heads} heads")
        self.heads = heads
        self.cross = cross
        self.residual = residual
        self.norm_q = LayerNorm(d)
        self.norm_kv = LayerNorm(d) if cross else None
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng, bias=False)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)
        self._last_weights: np.ndarray | None = None

    @property
    def last_weights(self) -> np.ndarray | None:
        """Attention weights from the most recent call, shape (..., heads, Tq, Tk)."""
        return self._last_weights

    def __call__(self, query: Tensor, context: Tensor | None = None) -> Tensor:
        q_in = self.norm_q(query)
        if context is None:
            kv_in = q_in
        else:
            kv_in = self.norm_kv(context) if self.norm_kv is not None else self.norm_q(context)
        q = _split_heads(self.q_proj(q_in), self.heads)
        k = _split_heads(self.k_proj(kv_in), self.heads)
        v = _split_heads(self.v_proj(kv_in), self.heads)
        scale = 1.0 / math.sqrt(q.shape[-1])
        weights = T.softmax(T.matmul(q, T.swapaxes(k, -1, -2)) * scale, axis=-1)
        self._last_weights = weights.data
        out = self.out_proj(_merge_heads(T.matmul(weights, v)))
        return query + out if self.residual else out
