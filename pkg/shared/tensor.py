"""
Dense float64 tensors with a reverse-mode gradient tape.

Every primitive computes its forward value with numpy and, when any input
requires a gradient and grad mode is on, records a closure that maps the
output gradient to one gradient per input. ``backward`` walks the recorded
graph in reverse topological order and frees it afterwards.
"""

from __future__ import annotations

import contextlib
import logging
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit, logsumexp

from shared.errors import GradientError, ShapeError

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12

_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape)
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar, scalars are wrapped as constants.

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Tensor division is only defined for scalar divisors")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf. ``trainable=False`` freezes it for the optimizer."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str | None = None, trainable: bool = True):
        super().__init__(data, requires_grad=trainable, name=name)
        self.trainable = trainable

    def freeze(self) -> None:
        self.trainable = False
        self.requires_grad = False
        self.grad = None


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(primitive: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(primitive, a.shape, b.shape) from None


# ------------------------
# Elementwise
# ------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
        "sub",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def sigmoid(a: Tensor) -> Tensor:
    y = expit(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def silu(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _make(
        a.data * s,
        (a,),
        lambda g: (g * (s + a.data * s * (1.0 - s)),),
        "silu",
    )


def log(a: Tensor) -> Tensor:
    clamped = np.maximum(a.data, LOG_CLAMP)
    live = a.data > LOG_CLAMP
    return _make(np.log(clamped), (a,), lambda g: (g * live / clamped,), "log")


# ------------------------
# Linear algebra
# ------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def sparse_matmul(matrix: sparse.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    if x.ndim != 2 or matrix.shape[1] != x.shape[0]:
        raise ShapeError("sparse_matmul", matrix.shape, x.shape)
    csr = sparse.csr_matrix(matrix)
    return _make(
        np.asarray(csr @ x.data),
        (x,),
        lambda g: (np.asarray(csr.T @ g),),
        "sparse_matmul",
    )


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape)
    return _make(
        np.asarray(a.data @ b.data),
        (a, b),
        lambda g: (g * b.data, g * a.data),
        "dot",
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose", a.shape)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(out.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError("concat", tensors[0].shape, t.shape)
    widths = [t.shape[-1] for t in tensors]
    bounds = np.cumsum(widths)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=-1))

    return _make(np.concatenate([t.data for t in tensors], axis=-1), tuple(tensors), backward_fn, "concat")


# ------------------------
# Row-wise
# ------------------------


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (a,), backward_fn, "softmax")


def l2_normalize(a: Tensor) -> Tensor:
    """Scale every row to unit L2 norm. All-zero rows stay zero."""
    norms = np.linalg.norm(a.data, axis=-1, keepdims=True)
    live = norms > 0.0
    safe = np.where(live, norms, 1.0)
    y = np.where(live, a.data / safe, 0.0)

    def backward_fn(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return (np.where(live, (g - y * proj) / safe, 0.0),)

    return _make(y, (a,), backward_fn, "l2_normalize")


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, targets.shape)
    rows = np.arange(logits.shape[0])
    lse = logsumexp(logits.data, axis=-1)
    loss = float(np.mean(lse - logits.data[rows, targets]))

    def backward_fn(g):
        probs = np.exp(logits.data - lse[:, None])
        probs[rows, targets] -= 1.0
        return (g * probs / logits.shape[0],)

    return _make(np.asarray(loss), (logits,), backward_fn, "softmax_cross_entropy")


# ------------------------
# Indexing and reductions
# ------------------------


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Select rows of ``table``. Repeated indices accumulate in backward."""
    index = np.asarray(index, dtype=np.int64)
    if table.ndim < 1 or (index.size and (index.min() < 0 or index.max() >= table.shape[0])):
        raise ShapeError("gather", table.shape, index.shape)

    def backward_fn(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _make(table.data[index], (table,), backward_fn, "gather")


def segment_sum(x: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Sum rows of ``x`` into ``count`` buckets by segment id."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ShapeError("segment_sum", x.shape, segments.shape)
    out = np.zeros((count,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    return _make(out, (x,), lambda g: (g[segments],), "segment_sum")


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis))

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), backward_fn, "sum")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


def mse(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean over rows of the squared L2 distance between rows."""
    if prediction.shape != target.shape:
        raise ShapeError("mse", prediction.shape, target.shape)
    diff = prediction.data - target.data
    rows = 1 if diff.ndim == 1 else diff.shape[0]
    value = np.asarray((diff**2).sum() / rows)
    return _make(
        value,
        (prediction, target),
        lambda g: (2.0 * g * diff / rows, -2.0 * g * diff / rows),
        "mse",
    )


# ------------------------
# Backward
# ------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    visited: set[int] = set()
    order: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf, then free the tape."""
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss does not depend on any tensor that requires a gradient")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    order = _topological_order(loss)
    for node in order:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg

    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
