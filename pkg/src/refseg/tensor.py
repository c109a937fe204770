"""Dense float64 tensors with a reverse-mode autodiff tape.

Design rules kept deliberately strict:

* everything is float64, row-major, and finite — an op that produces NaN/Inf
  raises instead of propagating garbage;
* no implicit broadcasting: elementwise ops demand identical shapes, scalar
  variants are separate functions;
* a tensor produced by an op carries its backward closure; ``backward`` on a
  scalar walks the tape exactly once and then clears it, so a second call
  raises ``StaleTape``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeMismatch",
    "NonFiniteValue",
    "NotScalar",
    "StaleTape",
    "no_grad",
    "grad_enabled",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "add_scalar",
    "mul_scalar",
    "relu",
    "square",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "matmul",
    "tile_leading",
    "pad2d",
    "crop2d",
]


class ShapeMismatch(ValueError):
    """Operand shapes disagree where exact agreement is required."""


class NonFiniteValue(ArithmeticError):
    """A tensor acquired NaN or Inf entries."""


class NotScalar(ValueError):
    """``backward`` was called on a tensor with more than one element."""


class StaleTape(RuntimeError):
    """``backward`` was called again over an already-consumed tape."""


_GRAD_STACK = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (values only, no gradients)."""
    _GRAD_STACK.append(False)
    try:
        yield
    finally:
        _GRAD_STACK.pop()


def grad_enabled() -> bool:
    return _GRAD_STACK[-1]


class Tensor:
    """A dense float64 array, optionally tracked by the autodiff tape.

    ``data`` is never mutated by operations.  Optimizers update leaf data in
    place between forward passes, which is safe because the tape holding
    references to it has been cleared by then.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor initialised with NaN/Inf entries")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._spent = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; scalars route to the explicit *_scalar ops.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / float(other))
        raise TypeError("tensor/tensor division is not part of the op set")

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named trainable leaf.  Frozen parameters never accumulate gradient."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self.frozen = bool(frozen)

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False
        self.grad = None

    def __repr__(self) -> str:
        flag = ", frozen" if self.frozen else ""
        return f"Parameter({self.name!r}, shape={self.shape}{flag})"


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward_fn: Callable[[np.ndarray], None] | None,
) -> Tensor:
    """Wrap an op result, attaching the tape node when gradients are live."""
    if data.dtype != np.float64:
        data = data.astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise NonFiniteValue("operation produced NaN/Inf entries")
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out._spent = False
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar, visiting every tape node exactly once.

    The tape is cleared afterwards; a second call on the same graph raises
    ``StaleTape``.  Gradients accumulate into ``.grad`` of every reachable
    tensor with ``requires_grad`` (frozen parameters are untouched because
    they never require grad).
    """
    if loss.data.size != 1:
        raise NotScalar(f"backward on tensor of shape {loss.shape}")
    if loss._spent:
        raise StaleTape("tape already consumed by a previous backward")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        nid = id(node)
        if nid in visited:
            continue
        visited.add(nid)
        if node._spent:
            raise StaleTape("graph reuses a node from a consumed tape")
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
            node._spent = True
    loss._spent = True


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors (no broadcasting)."""
    _require_same_shape(a, b, "mul")

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bw)


def add_scalar(a: Tensor, s: float) -> Tensor:
    def bw(g):
        _accum(a, g)

    return _make(a.data + s, (a,), bw)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    def bw(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def bw(g):
        _accum(a, g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, np.full_like(a.data, float(g.reshape(()))))

    return _make(np.asarray(a.data.sum()), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = float(a.data.size)

    def bw(g):
        _accum(a, np.full_like(a.data, float(g.reshape(())) / n))

    return _make(np.asarray(a.data.mean()), (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))

    def bw(g):
        _accum(a, np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) dimensions must match exactly; there is no batch
    broadcasting.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        _accum(a, g @ np.swapaxes(b.data, -1, -2))
        _accum(b, np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), bw)


def tile_leading(a: Tensor, n: int) -> Tensor:
    """Stack ``n`` copies of ``a`` along a new leading axis (explicit expand)."""

    def bw(g):
        _accum(a, g.sum(axis=0))

    return _make(np.broadcast_to(a.data, (n,) + a.data.shape).copy(), (a,), bw)


def pad2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the last two axes."""
    widths = [(0, 0)] * (a.data.ndim - 2) + [(top, bottom), (left, right)]
    h, w = a.data.shape[-2], a.data.shape[-1]

    def bw(g):
        sl = (Ellipsis, slice(top, top + h), slice(left, left + w))
        _accum(a, g[sl])

    return _make(np.pad(a.data, widths), (a,), bw)


def crop2d(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Remove rows/columns from the borders of the last two axes."""
    h, w = a.data.shape[-2], a.data.shape[-1]
    sl = (Ellipsis, slice(top, h - bottom), slice(left, w - right))
    widths = [(0, 0)] * (a.data.ndim - 2) + [(top, bottom), (left, right)]

    def bw(g):
        _accum(a, np.pad(g, widths))

    return _make(np.ascontiguousarray(a.data[sl]), (a,), bw)
