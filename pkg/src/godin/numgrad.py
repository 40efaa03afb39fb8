"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Operations are recorded on the tape opened by :func:`tape` whenever at least
one operand requires a gradient. Outside a tape the same operations simply
compute values, which is what inference paths use.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with tape():
    ...     y = (x * x).sum()
    ...     (dx,) = grad(y, [x])
    >>> dx.data
    array([6.])
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "NoTapeError",
    "Tensor",
    "Tape",
    "tape",
    "active_tape",
    "grad",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "relu",
    "sigmoid",
    "square",
    "sum",
    "mean",
    "max_along_axis",
    "softmax",
    "log_softmax",
    "reshape",
    "transpose",
    "clip",
    "norm",
]


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by '{op}'")
        self.op = op


class ShapeError(ValueError):
    pass


class NoTapeError(RuntimeError):
    pass


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: "Tensor", parents: tuple["Tensor", ...], backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of primitive ops.

    Recording order is already a topological order, so the backward pass is
    a single reverse sweep that touches each node once.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], backward: Callable) -> None:
        node = _Node(out, parents, backward)
        out.tape_node = node
        self.nodes.append(node)


_local = threading.local()


def active_tape() -> Tape | None:
    return getattr(_local, "tape", None)


@contextmanager
def tape() -> Iterator[Tape]:
    """Open a fresh tape for the current thread."""
    previous = active_tape()
    t = Tape()
    _local.tape = t
    try:
        yield t
    finally:
        _local.tape = previous


class Tensor:
    __slots__ = ("data", "requires_grad", "tape_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError("Tensor")
        self.requires_grad = requires_grad
        self.tape_node: _Node | None = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.tape_node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        return max_along_axis(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _make(op: str, value: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    out = Tensor._wrap(value)
    t = active_tape()
    if t is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        t.record(out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shapes(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- binary ops ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes("div", a, b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero in denominator")
    value = a.data / b.data

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * value, b.shape)

    return _make("div", value, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _make("matmul", a.data @ b.data, (a, b), backward)


# --- unary ops -------------------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        value = np.exp(a.data)
    return _make("exp", value, (a,), lambda g: (g * value,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log(a.data)
    return _make("log", value, (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        value = np.sqrt(a.data)
    if np.any(value == 0):
        # derivative is unbounded at zero
        raise NonFiniteError("sqrt")
    return _make("sqrt", value, (a,), lambda g: (g * 0.5 / value,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    value = expit(a.data)
    return _make("sigmoid", value, (a,), lambda g: (g * value * (1.0 - value),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def norm(a, axis: int = -1, floor: float = 0.0, keepdims: bool = True) -> Tensor:
    """Euclidean norm along ``axis``, floored at ``floor``.

    Below the floor the output is the constant ``floor`` and carries no
    gradient, so zero vectors are safe.
    """
    a = as_tensor(a)
    raw = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    above = raw > floor
    value = np.where(above, raw, floor)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(above, raw, 1.0)
        return (g * above * a.data / safe,)

    out = value if keepdims else np.squeeze(value, axis=axis)
    return _make("norm", out, (a,), backward)


# --- reductions and shape ops ----------------------------------------------


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    value = np.sum(a.data, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(value, dtype=np.float64), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError("mean: empty reduction")
    value = np.mean(a.data, axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make("mean", np.asarray(value, dtype=np.float64), (a,), backward)


def max_along_axis(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximiser."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("max_along_axis: empty axis")
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    value = np.take_along_axis(a.data, idx, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        out = np.zeros_like(a.data)
        np.put_along_axis(out, idx, g, axis=axis)
        return (out,)

    if not keepdims:
        value = np.squeeze(value, axis=axis)
    return _make("max_along_axis", value, (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make("reshape", value, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose: expected a matrix")
    return _make("transpose", a.data.T, (a,), lambda g: (g.T,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("softmax: empty class axis")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (value * (g - np.sum(g * value, axis=axis, keepdims=True)),)

    return _make("softmax", value, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError("log_softmax: empty class axis")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    value = shifted - lse

    def backward(g):
        p = np.exp(value)
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _make("log_softmax", value, (a,), backward)


# --- differentiation -------------------------------------------------------


def grad(scalar: Tensor, wrt: Sequence[Tensor]) -> list[Tensor]:
    """Reverse-mode gradients of a one-element tensor.

    Tensors in ``wrt`` that the scalar does not depend on get zeros.
    """
    t = active_tape()
    if t is None:
        raise NoTapeError("grad() called outside an active tape")
    if scalar.size != 1:
        raise ShapeError(f"grad: expected a single-element output, got shape {scalar.shape}")

    keep = {id(w) for w in wrt}
    grads: dict[int, np.ndarray] = {id(scalar): np.ones_like(scalar.data)}
    for node in reversed(t.nodes):
        key = id(node.out)
        g = grads.get(key) if key in keep else grads.pop(key, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    out = []
    for w in wrt:
        g = grads.get(id(w))
        if g is None:
            g = np.zeros_like(w.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("grad")
        out.append(Tensor._wrap(np.asarray(g, dtype=np.float64).reshape(w.shape)))
    return out
