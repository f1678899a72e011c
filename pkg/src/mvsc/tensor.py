"""Dense float64 tensors with reverse-mode automatic differentiation.

Each differentiable operation builds a node holding its parents and a closure
mapping the output gradient to per-parent gradients. ``backward`` walks the
recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_GRAD_ENABLED = True

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out.name = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(a.data**exponent, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _node(x * cdf, (a,), bw)


# ----------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def var(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance (divides by the element count)."""
    a = as_tensor(a)
    centered = a - mean(a, axis, keepdims=True)
    return mean(centered * centered, axis, keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


def layer_norm(x, weight, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = as_tensor(x)
    mu = mean(x, -1, keepdims=True)
    centered = x - mu
    variance = mean(centered * centered, -1, keepdims=True)
    return centered / sqrt(variance + eps) * weight + bias


# ----------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(a.data @ b.data, (a, b), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(ax % a.ndim for ax in axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    perm = list(range(a.ndim))
    perm[ax1], perm[ax2] = perm[ax2], perm[ax1]
    return transpose(a, perm)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape).copy()
    return _node(out, (a,), lambda g: (unbroadcast(g, a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, _insert(t.shape, axis, t.ndim)) for t in tensors], axis=axis)


def _insert(shape, axis, ndim):
    axis = axis % (ndim + 1)
    return shape[:axis] + (1,) + shape[axis:]


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node(out, (a,), bw)


# --------------------------------------------------------------- convolutions


def conv2d(x, weight, bias=None, stride: int | None = None) -> Tensor:
    """Non-overlapping 2D convolution with kernel size equal to stride.

    x: (..., C_in, H, W); weight: (C_out, C_in, s, s); bias: (C_out,).
    Returns (..., C_out, H/s, W/s).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    c_out, c_in, s, s2 = weight.shape
    if s != s2 or (stride is not None and stride != s):
        raise ShapeError("conv2d supports square kernels with kernel == stride only")
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise ShapeError(f"conv2d expects (..., {c_in}, H, W), got {x.shape}")
    H, W = x.shape[-2:]
    if H % s or W % s:
        raise ShapeError(f"spatial dims {H}x{W} not divisible by stride {s}")
    lead = x.shape[:-3]
    n = len(lead)
    h, w = H // s, W // s
    patches = reshape(x, lead + (c_in, h, s, w, s))
    patches = transpose(patches, tuple(range(n)) + (n + 1, n + 3, n, n + 2, n + 4))
    patches = reshape(patches, lead + (h, w, c_in * s * s))
    kernel = transpose(reshape(weight, (c_out, c_in * s * s)), (1, 0))
    out = patches @ kernel
    if bias is not None:
        out = out + bias
    return transpose(out, tuple(range(n)) + (n + 2, n, n + 1))


def conv_transpose2d(z, weight, bias=None, stride: int | None = None) -> Tensor:
    """Transposed convolution with kernel size equal to stride.

    z: (..., C_in, h, w); weight: (C_in, C_out, s, s); bias: (C_out,).
    Each input location writes one disjoint s x s output block.
    """
    z, weight = as_tensor(z), as_tensor(weight)
    c_in, c_out, s, s2 = weight.shape
    if s != s2 or (stride is not None and stride != s):
        raise ShapeError("conv_transpose2d supports square kernels with kernel == stride only")
    if z.ndim < 3 or z.shape[-3] != c_in:
        raise ShapeError(f"conv_transpose2d expects (..., {c_in}, h, w), got {z.shape}")
    lead = z.shape[:-3]
    n = len(lead)
    h, w = z.shape[-2:]
    tokens = transpose(z, tuple(range(n)) + (n + 1, n + 2, n))
    blocks = tokens @ reshape(weight, (c_in, c_out * s * s))
    blocks = reshape(blocks, lead + (h, w, c_out, s, s))
    blocks = transpose(blocks, tuple(range(n)) + (n + 2, n, n + 3, n + 1, n + 4))
    out = reshape(blocks, lead + (c_out, h * s, w * s))
    if bias is not None:
        out = out + reshape(bias, (c_out, 1, 1))
    return out


# ------------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> list[np.ndarray] | None:
    """Back-propagate from a scalar ``loss``.

    Leaf gradients are accumulated into ``.grad``. If ``wrt`` is given, the
    gradients of those tensors from this call are returned, with zeros for
    tensors the loss does not depend on. ``wrt`` may name intermediate nodes.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    wrt = list(wrt) if wrt is not None else None
    wanted = {id(t) for t in wrt} if wrt is not None else set()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    collected: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        for node in reversed(_topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                collected[id(node)] = g
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if wrt is None:
        return None
    return [collected.get(id(t), np.zeros_like(t.data)) for t in wrt]


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """Compare reverse-mode gradients against central finite differences.

    Returns the max over all input coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    inputs = list(inputs)
    analytic = backward(f(*inputs), wrt=inputs)
    worst = 0.0
    for t, a_grad in zip(inputs, analytic):
        a_flat = a_grad.reshape(-1)
        for i in range(t.data.size):
            idx = np.unravel_index(i, t.shape)
            orig = t.data[idx]
            hi, lo = orig + step, orig - step
            t.data[idx] = hi
            with no_grad():
                f_plus = f(*inputs).item()
            t.data[idx] = lo
            with no_grad():
                f_minus = f(*inputs).item()
            t.data[idx] = orig
            # divide by the step actually represented, not the nominal 2*step
            numeric = (f_plus - f_minus) / (hi - lo)
            denom = max(1e-8, abs(a_flat[i]) + abs(numeric))
            worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
