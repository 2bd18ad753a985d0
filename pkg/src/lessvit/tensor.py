"""Minimal dense tensor with reverse-mode autodiff and FLOP instrumentation.

Arrays are numpy buffers wrapped in an immutable :class:`Tensor`. Every op
records a closure that pushes the output gradient back to its inputs, so
``loss.backward()`` fills ``.grad`` on the leaves that asked for it.

Matrix products are the only ops that contribute to the closed-form FLOP
accounting; softmax, layer norm and the activation add small per-element
constants under their own labels.
"""
from __future__ import annotations

import contextlib
import contextvars
from collections import defaultdict
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError


_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype: contextvars.ContextVar = contextvars.ContextVar("default_dtype", default=np.float32)
_active_counters: contextvars.ContextVar = contextvars.ContextVar("flop_counters", default=())

# per-element constants for non-matmul ops; excluded from closed-form comparisons
SOFTMAX_FLOPS_PER_ELEMENT = 5
NORM_FLOPS_PER_ELEMENT = 8
GELU_FLOPS_PER_ELEMENT = 10


def get_default_dtype():
    return _default_dtype.get()


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the dtype new tensors are created with ("f32" or "f64")."""
    try:
        dtype = _DTYPES[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_DTYPES)}") from None
    token = _default_dtype.set(dtype)
    try:
        yield dtype
    finally:
        _default_dtype.reset(token)


def resolve_dtype(name: str | None):
    return get_default_dtype() if name is None else _DTYPES[name]


class FlopCounter:
    """Accumulates FLOPs per label while active as a context manager.

    Counters nest: every active counter sees each increment.
    """

    def __init__(self):
        self.by_label: dict[str, int] = defaultdict(int)
        self._token = None

    @property
    def total(self) -> int:
        return sum(self.by_label.values())

    def add(self, label: str, flops: int) -> None:
        self.by_label[label] += int(flops)

    def merge(self, other: "FlopCounter") -> "FlopCounter":
        out = FlopCounter()
        for src in (self, other):
            for k, v in src.by_label.items():
                out.by_label[k] += v
        return out

    def __getitem__(self, label: str) -> int:
        return self.by_label.get(label, 0)

    def __enter__(self):
        self._token = _active_counters.set(_active_counters.get() + (self,))
        return self

    def __exit__(self, *exc):
        _active_counters.reset(self._token)
        self._token = None
        return False

    def __repr__(self):
        return f"FlopCounter(total={self.total}, by_label={dict(self.by_label)})"


def _count(label: str, flops: int) -> None:
    for counter in _active_counters.get():
        counter.add(label, flops)


class Tensor:
    """Immutable dense array node in an autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else get_default_dtype()
        arr = np.array(data, dtype=dtype)
        if arr.ndim and min(arr.shape) < 1:
            raise DimensionError(f"shape extents must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @classmethod
    def _from_op(cls, arr: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        if not np.all(np.isfinite(arr)):
            raise NumericError("operation produced NaN or Inf")
        out = object.__new__(cls)
        arr.flags.writeable = False
        out.data = arr
        out.grad = None
        needs = any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = tuple(parents) if needs else ()
        out._backward = backward if needs else None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- autodiff -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), -self)

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

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

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or get_default_dtype()))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data
    return Tensor._from_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        s = b
        return Tensor._from_op(a.data * np.asarray(s, dtype=a.dtype), (a,), lambda g: (g * s,))
    out = a.data * b.data
    return Tensor._from_op(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def matmul(a: Tensor, b: Tensor, label: str = "matmul") -> Tensor:
    """Batched matrix product over the last two axes; leading axes broadcast."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    m, k = a.shape[-2:]
    k2, n = b.shape[-2:]
    if k != k2:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise DimensionError(f"batch axes do not broadcast: {a.shape} @ {b.shape}") from e
    _count(label, 2 * int(np.prod(batch, dtype=np.int64)) * m * k * n)
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from e
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    axes = list(range(x.ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def getitem(x: Tensor, index) -> Tensor:
    out = np.array(x.data[index])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(out, (x,), backward)


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along one axis; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, axis, 0)
        g_moved = np.moveaxis(g, axis, 0).reshape((idx.size,) + moved.shape[1:])
        np.add.at(moved, idx.ravel(), g_moved)
        return (full,)

    return Tensor._from_op(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tensors, backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    src = x.shape
    out = np.array(np.broadcast_to(x.data, shape))
    return Tensor._from_op(out, (x,), lambda g: (_unbroadcast(g, src),))


def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return Tensor._from_op(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return tsum(x, axis, keepdims) * (1.0 / n)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by subtracting the row max."""
    x = _as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError("softmax needs a non-empty last axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    _count("softmax", SOFTMAX_FLOPS_PER_ELEMENT * p.size)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(p, (x,), backward)


softmax = softmax_rows


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _count("norm", NORM_FLOPS_PER_ELEMENT * out.size)
    d = x.shape[-1]

    def backward(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gb = _unbroadcast(g, beta.shape)
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / d)
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)
    _count("gelu", GELU_FLOPS_PER_ELEMENT * out.size)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return Tensor._from_op(out, (x,), backward)


def rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate adjacent feature pairs (x[2i], x[2i+1]) by angles with given cos/sin.

    ``cos``/``sin`` broadcast against ``x[..., ::2]``.
    """
    if x.shape[-1] % 2:
        raise DimensionError(f"rotate_pairs needs an even last extent, got {x.shape[-1]}")
    xe, xo = x.data[..., 0::2], x.data[..., 1::2]
    half = np.broadcast_shapes(xe.shape, cos.shape)
    out = np.empty(half[:-1] + (2 * half[-1],), dtype=x.dtype)
    out[..., 0::2] = xe * cos - xo * sin
    out[..., 1::2] = xe * sin + xo * cos

    def backward(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (_unbroadcast(gx, x.shape),)

    return Tensor._from_op(out, (x,), backward)


def kron(a: Tensor, b: Tensor) -> Tensor:
    """Kronecker product of two matrices: out[i*m+j, k*n+l] = a[i,k] * b[j,l]."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"kron needs 2-D operands, got {a.shape} and {b.shape}")
    p, q = a.shape
    m, n = b.shape
    out = (a.data[:, None, :, None] * b.data[None, :, None, :]).reshape(p * m, q * n)

    def backward(g):
        g4 = g.reshape(p, m, q, n)
        return np.einsum("ijkl,jl->ik", g4, b.data), np.einsum("ijkl,ik->jl", g4, a.data)

    return Tensor._from_op(out, (a, b), backward)


def grad_check(
    f: Callable[[Tensor], Tensor | float],
    x: Tensor | np.ndarray,
    analytic_grad: Tensor | np.ndarray,
    eps: float = 1e-5,
    indices: Iterable[tuple[int, ...]] | None = None,
) -> float:
    """Compare an analytic gradient against central differences.

    Returns the max over checked coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. ``indices`` restricts the
    check to a subset of coordinates; by default every coordinate is probed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x)
    ana = np.asarray(analytic_grad.data if isinstance(analytic_grad, Tensor) else analytic_grad)
    if ana.shape != base.shape:
        raise DimensionError(f"gradient shape {ana.shape} != input shape {base.shape}")

    def evaluate(arr):
        val = f(Tensor(arr))
        val = float(val.data) if isinstance(val, Tensor) else float(val)
        if not np.isfinite(val):
            raise NumericError("function evaluation is not finite")
        return val

    coords = list(np.ndindex(base.shape)) if indices is None else [tuple(np.atleast_1d(i)) for i in indices]
    worst = 0.0
    for idx in coords:
        plus = base.copy()
        plus[idx] += eps
        minus = base.copy()
        minus[idx] -= eps
        numeric = (evaluate(plus) - evaluate(minus)) / (2 * eps)
        err = abs(float(ana[idx]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


def parameter(arr, dtype=None) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=dtype)
