"""Dense float arrays with taped reverse-mode differentiation.

Float32 is the working precision; reductions accumulate in float64 before
casting back. Ops run identically with or without an active tape, so forward
values never depend on whether gradients are being recorded.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715

_uid_counter = itertools.count()
_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops; reverse pass replays it backwards."""

    def __init__(self) -> None:
        self._records: list[tuple["Tensor", tuple["Tensor", ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted: exiting a tape that is not on top")
        stack.pop()

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], vjp: Callable) -> None:
        self._records.append((out, inputs, vjp))

    def __len__(self) -> int:
        return len(self._records)


class Tensor:
    """Immutable-shape ndarray wrapper; `data` may be updated in place by optimizers."""

    __slots__ = ("data", "uid")

    def __init__(self, data, dtype=None) -> None:
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.uid = next(_uid_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after a broadcasted forward op."""
    dtype = grad.dtype
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return np.ascontiguousarray(grad, dtype=dtype).reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{op}: shapes {sa} and {sb} do not broadcast")


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    _check_elementwise(a, b, "add")
    out = Tensor(a.data + b.data)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    _check_elementwise(a, b, "sub")
    out = Tensor(a.data - b.data)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    _check_elementwise(a, b, "mul")
    out = Tensor(a.data * b.data)

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    _check_elementwise(a, b, "div")
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dims differ for shapes {a.shape} and {b.shape}")
    _check_elementwise_batch = a.shape[:-2], b.shape[:-2]
    for da, db in zip(reversed(_check_elementwise_batch[0]), reversed(_check_elementwise_batch[1])):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"matmul: batch dims differ for shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        if ga.shape != a.shape:
            ga = _reduce_to(ga, a.shape)
        if gb.shape != b.shape:
            gb = _reduce_to(gb, b.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


def exp(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.sqrt(a.data))

    def vjp(g):
        return (g * (0.5 / out.data),)

    return _record(out, (a,), vjp)


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    p = float(p)
    out = Tensor(a.data**p)

    def vjp(g):
        return (g * (p * a.data ** (p - 1.0)),)

    return _record(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.tanh(a.data))
    return _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))


def gelu(a) -> Tensor:
    """GELU with the tanh approximation; exact gradient of the approximation.

    The cubic runs as x*x*x: a literal x**3 lowers to powf, whose SIMD path
    bails out on negative bases and crawls through half the activations.
    """
    a = _wrap(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * (x2 * x)))
    out = Tensor(0.5 * x * (1.0 + t))

    def vjp(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        return (g * d,)

    return _record(out, (a,), vjp)


def relu(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = Tensor(np.maximum(x, 0.0))

    def vjp(g):
        return (g * (x > 0.0),)

    return _record(out, (a,), vjp)


def softplus(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    out = Tensor(np.logaddexp(0.0, x).astype(x.dtype, copy=False))

    def vjp(g):
        sig = 1.0 / (1.0 + np.exp(-x))
        return (g * sig,)

    return _record(out, (a,), vjp)


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _wrap(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True, dtype=np.float64).astype(a.dtype)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (y * (g - dot),)

    return _record(out, (a,), vjp)


def layernorm(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    a = _wrap(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True, dtype=np.float64)
    var = np.square(x.astype(np.float64) - mu).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y64 = (x - mu) * inv
    out = Tensor(y64.astype(a.dtype))

    def vjp(g):
        g64 = g.astype(np.float64)
        gm = g64.mean(axis=-1, keepdims=True)
        gy = (g64 * y64).mean(axis=-1, keepdims=True)
        dx = inv * (g64 - gm - y64 * gy)
        return (dx.astype(g.dtype),)

    return _record(out, (a,), vjp)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out64 = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = Tensor(np.asarray(out64, dtype=a.dtype))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(g.dtype, copy=False).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out64 = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = Tensor(np.asarray(out64, dtype=a.dtype))
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]

    def vjp(g):
        scale = 1.0 / count
        if axis is None:
            return ((np.broadcast_to(g, a.shape) * scale).astype(g.dtype, copy=False).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, a.shape) * scale).copy(),)

    return _record(out, (a,), vjp)


def cumsum(a, axis: int) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.cumsum(a.data, axis=axis).astype(a.dtype, copy=False))

    def vjp(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev.astype(g.dtype, copy=False),)

    return _record(out, (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ValueError("concat: need at least one tensor")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    return _record(out, tuple(ts), vjp)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape))

    def vjp(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), vjp)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.ascontiguousarray(np.transpose(a.data, axes)))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def vjp(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _record(out, (a,), vjp)


def slice_(a, key) -> Tensor:
    """Basic indexing only (ints, slices, tuples thereof)."""
    a = _wrap(a)
    out = Tensor(np.ascontiguousarray(a.data[key]))

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[key] += g
        return (full,)

    return _record(out, (a,), vjp)


def gather(a, indices) -> Tensor:
    """Select rows along axis 0; `indices` is any integer array."""
    a = _wrap(a)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"gather: indices must be integers, got dtype {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"gather: index out of range for axis of extent {a.shape[0]}")
    out = Tensor(a.data[idx])

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), vjp)


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Reverse pass over `tape` from scalar `loss`.

    Returns a gradient per requested parameter; parameters that do not reach
    the loss get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.uid: np.ones(loss.shape, dtype=loss.dtype)}
    for out, inputs, vjp in reversed(tape._records):
        g = grads.pop(out.uid, None)
        if g is None:
            continue
        in_grads = vjp(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None:
                continue
            acc = grads.get(t.uid)
            if acc is None:
                grads[t.uid] = gi
            else:
                grads[t.uid] = acc + gi
    result = {}
    for p in params:
        g = grads.get(p.uid)
        if g is None:
            g = np.zeros(p.shape, dtype=p.dtype)
        result[p] = np.asarray(g, dtype=p.dtype)
    return result
