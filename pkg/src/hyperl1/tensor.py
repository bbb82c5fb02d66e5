"""A small float64 tensor type with reverse-mode automatic differentiation.

Every operation records its parents and a closure that pushes the output
gradient back to them. ``backward`` sorts the recorded graph topologically and
replays the closures once each, newest node first.

Only what the rest of the package needs is here: elementwise maps, numpy-style
broadcasting arithmetic, batched matmul, axis reductions (including median),
softmax, and concat/slice/reshape/transpose plumbing.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError, UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only passes)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Tensor:
    """Dense float64 array that optionally participates in a gradient graph."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), _op: str = ""):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward: Callable[[], None] = lambda: None
        self._op = _op

    # ----------------------------------------------------------------- basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nonfinite(self) -> bool:
        """True when any entry is inf or nan (e.g. after division by zero)."""
        return not bool(np.isfinite(self.data).all())

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------- operators
    def __add__(self, other):
        return elementwise_binary(self, other, "add")

    def __radd__(self, other):
        return elementwise_binary(other, self, "add")

    def __sub__(self, other):
        return elementwise_binary(self, other, "sub")

    def __rsub__(self, other):
        return elementwise_binary(other, self, "sub")

    def __mul__(self, other):
        return elementwise_binary(self, other, "mul")

    def __rmul__(self, other):
        return elementwise_binary(other, self, "mul")

    def __truediv__(self, other):
        return elementwise_binary(self, other, "div")

    def __rtruediv__(self, other):
        return elementwise_binary(other, self, "div")

    def __neg__(self):
        return elementwise_unary(self, "neg")

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return index_select(self, index)

    # ---------------------------------------------------------- method sugar
    def silu(self):
        return elementwise_unary(self, "silu")

    def sigmoid(self):
        return elementwise_unary(self, "sigmoid")

    def relu(self):
        return elementwise_unary(self, "relu")

    def exp(self):
        return elementwise_unary(self, "exp")

    def log(self):
        return elementwise_unary(self, "log")

    def square(self):
        return elementwise_unary(self, "square")

    def softplus(self):
        return elementwise_unary(self, "softplus")

    def sqrt(self):
        return elementwise_unary(self, "sqrt")

    def sum(self, axis=None, keepdims=False):
        return reduce(self, axis, "sum", keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce(self, axis, "mean", keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce(self, axis, "max", keepdims)

    def min(self, axis=None, keepdims=False):
        return reduce(self, axis, "min", keepdims)

    def median(self, axis=None, keepdims=False):
        return reduce(self, axis, "median", keepdims)

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

    def backward(self) -> list:
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=tuple(parents) if needs else (), _op=op)
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


# --------------------------------------------------------------------- unary
UNARY_OPS = ("silu", "sigmoid", "relu", "exp", "log", "neg", "square", "softplus", "sqrt")


def elementwise_unary(t, f: str) -> Tensor:
    t = as_tensor(t)
    x = t.data
    if f == "silu":
        s = _sigmoid(x)
        y = x * s
        dydx = lambda: s + x * s * (1.0 - s)  # noqa: E731
    elif f == "sigmoid":
        y = _sigmoid(x)
        dydx = lambda: y * (1.0 - y)  # noqa: E731
    elif f == "relu":
        y = np.maximum(x, 0.0)
        dydx = lambda: (x > 0).astype(np.float64)  # noqa: E731
    elif f == "exp":
        y = np.exp(x)
        dydx = lambda: y  # noqa: E731
    elif f == "log":
        if np.any(x <= 0):
            raise DomainError("log of a non-positive value")
        y = np.log(x)
        dydx = lambda: 1.0 / x  # noqa: E731
    elif f == "neg":
        y = -x
        dydx = lambda: -np.ones_like(x)  # noqa: E731
    elif f == "square":
        y = x * x
        dydx = lambda: 2.0 * x  # noqa: E731
    elif f == "softplus":
        y = np.logaddexp(0.0, x)
        dydx = lambda: _sigmoid(x)  # noqa: E731
    elif f == "sqrt":
        if np.any(x < 0):
            raise DomainError("sqrt of a negative value")
        y = np.sqrt(x)
        dydx = lambda: 0.5 / y  # noqa: E731
    else:
        raise ValueError(f"unknown unary op {f!r}")

    out = _result(y, (t,), f)
    if out.requires_grad:
        def _backward():
            _accumulate(t, out.grad * dydx())
        out._backward = _backward
    return out


def silu(t):
    return elementwise_unary(t, "silu")


def sigmoid(t):
    return elementwise_unary(t, "sigmoid")


def relu(t):
    return elementwise_unary(t, "relu")


def exp(t):
    return elementwise_unary(t, "exp")


def log(t):
    return elementwise_unary(t, "log")


def square(t):
    return elementwise_unary(t, "square")


def softplus(t):
    return elementwise_unary(t, "softplus")


def sqrt(t):
    return elementwise_unary(t, "sqrt")


# -------------------------------------------------------------------- binary
def elementwise_binary(a, b, f: str) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    x, y = a.data, b.data
    if f == "add":
        z = x + y
    elif f == "sub":
        z = x - y
    elif f == "mul":
        z = x * y
    elif f == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            z = x / y
    else:
        raise ValueError(f"unknown binary op {f!r}")

    out = _result(z, (a, b), f)
    if out.requires_grad:
        def _backward():
            g = out.grad
            if f == "add":
                ga, gb = g, g
            elif f == "sub":
                ga, gb = g, -g
            elif f == "mul":
                ga, gb = g * y, g * x
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    ga, gb = g / y, -g * x / (y * y)
            if a.requires_grad:
                _accumulate(a, _unbroadcast(ga, a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(gb, b.shape))
        out._backward = _backward
    return out


def add(a, b):
    return elementwise_binary(a, b, "add")


def sub(a, b):
    return elementwise_binary(a, b, "sub")


def mul(a, b):
    return elementwise_binary(a, b, "mul")


def div(a, b):
    return elementwise_binary(a, b, "div")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner axes disagree: {a.shape} @ {b.shape}")
    try:
        z = a.data @ b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    out = _result(z, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            g = out.grad
            if a.requires_grad:
                _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        out._backward = _backward
    return out


# ---------------------------------------------------------------- reductions
def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for {ndim}-d tensor")
        norm.append(ax % ndim)
    return tuple(sorted(set(norm)))


def reduce(t, axis, f: str, keepdims: bool = False) -> Tensor:
    """Reduce ``t`` along ``axis`` (int, tuple, or None for all axes)."""
    t = as_tensor(t)
    axes = _normalize_axis(axis, t.ndim)
    if any(t.shape[ax] == 0 for ax in axes) or (t.size == 0):
        raise DomainError("reduction over an empty axis")
    x = t.data

    if f in ("median",) and len(axes) > 1:
        # collapse the reduced axes into one trailing axis
        keep = [ax for ax in range(t.ndim) if ax not in axes]
        moved = transpose(t, keep + list(axes))
        flat = reshape(moved, tuple(t.shape[ax] for ax in keep) + (-1,))
        out = reduce(flat, -1, f, keepdims=False)
        if keepdims:
            out = reshape(out, tuple(1 if ax in axes else t.shape[ax] for ax in range(t.ndim)))
        return out

    if f == "sum":
        y = x.sum(axis=axes, keepdims=True)
    elif f == "mean":
        y = x.mean(axis=axes, keepdims=True)
    elif f == "max":
        y = x.max(axis=axes, keepdims=True)
    elif f == "min":
        y = x.min(axis=axes, keepdims=True)
    elif f == "median":
        y = np.median(x, axis=axes[0], keepdims=True)
    else:
        raise ValueError(f"unknown reduction {f!r}")

    out_data = y if keepdims else y.reshape([s for ax, s in enumerate(x.shape) if ax not in axes])
    out = _result(out_data, (t,), f)
    if out.requires_grad:
        count = int(np.prod([x.shape[ax] for ax in axes]))

        def _backward():
            g = out.grad.reshape(y.shape)
            if f == "sum":
                gx = np.broadcast_to(g, x.shape)
            elif f == "mean":
                gx = np.broadcast_to(g / count, x.shape)
            elif f in ("max", "min"):
                mask = (x == y).astype(np.float64)
                gx = mask * g / mask.sum(axis=axes, keepdims=True)
            else:
                ax = axes[0]
                n = x.shape[ax]
                order = np.argsort(x, axis=ax, kind="stable")
                weights = np.zeros(n)
                if n % 2:
                    weights[n // 2] = 1.0
                else:
                    weights[n // 2 - 1] = weights[n // 2] = 0.5
                wshape = [1] * x.ndim
                wshape[ax] = n
                sorted_g = np.broadcast_to(weights.reshape(wshape), x.shape) * g
                gx = np.zeros_like(x)
                np.put_along_axis(gx, order, sorted_g, axis=ax)
            _accumulate(t, gx)
        out._backward = _backward
    return out


def softmax(t, axis: int = -1) -> Tensor:
    t = as_tensor(t)
    (ax,) = _normalize_axis(axis, t.ndim)
    shifted = t.data - t.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)
    out = _result(s, (t,), "softmax")
    if out.requires_grad:
        def _backward():
            g = out.grad
            _accumulate(t, s * (g - (g * s).sum(axis=ax, keepdims=True)))
        out._backward = _backward
    return out


# ------------------------------------------------------------- shape plumbing
def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    (ax,) = _normalize_axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != ax):
            raise ShapeError(f"concat shape mismatch: {[t.shape for t in tensors]}")
    z = np.concatenate([t.data for t in tensors], axis=ax)
    out = _result(z, tensors, "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

        def _backward():
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * ndim
                    idx[ax] = slice(lo, hi)
                    _accumulate(t, out.grad[tuple(idx)])
        out._backward = _backward
    return out


def slice_axis(t, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous range ``[start, stop)`` along one axis."""
    t = as_tensor(t)
    (ax,) = _normalize_axis(axis, t.ndim)
    if not 0 <= start <= stop <= t.shape[ax]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis of length {t.shape[ax]}")
    idx = [slice(None)] * t.ndim
    idx[ax] = slice(start, stop)
    return index_select(t, tuple(idx))


def index_select(t, index) -> Tensor:
    """numpy-style indexing; the gradient scatters back with ``np.add.at``."""
    t = as_tensor(t)
    try:
        z = t.data[index]
    except IndexError as exc:
        raise ShapeError(str(exc)) from exc
    out = _result(np.array(z, dtype=np.float64), (t,), "index")
    if out.requires_grad:
        def _backward():
            gx = np.zeros_like(t.data)
            np.add.at(gx, index, out.grad)
            _accumulate(t, gx)
        out._backward = _backward
    return out


def reshape(t, shape) -> Tensor:
    t = as_tensor(t)
    try:
        z = t.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    out = _result(z.copy(), (t,), "reshape")
    if out.requires_grad:
        def _backward():
            _accumulate(t, out.grad.reshape(t.shape))
        out._backward = _backward
    return out


def transpose(t, axes=None) -> Tensor:
    t = as_tensor(t)
    axes = tuple(reversed(range(t.ndim))) if axes is None else tuple(a % t.ndim for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"invalid permutation {axes} for {t.ndim}-d tensor")
    z = np.transpose(t.data, axes)
    out = _result(np.ascontiguousarray(z), (t,), "transpose")
    if out.requires_grad:
        inverse = tuple(np.argsort(axes))

        def _backward():
            _accumulate(t, np.transpose(out.grad, inverse))
        out._backward = _backward
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack of an empty list")
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


def broadcast_to(t, shape) -> Tensor:
    t = as_tensor(t)
    try:
        z = np.broadcast_to(t.data, shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    out = _result(np.array(z), (t,), "broadcast")
    if out.requires_grad:
        def _backward():
            _accumulate(t, _unbroadcast(out.grad, t.shape))
        out._backward = _backward
    return out


# ------------------------------------------------------------------ backward
def topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root``, parents before children. Iterative DFS."""
    order, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> list:
    """Populate ``.grad`` on every node feeding ``loss``; return the leaves.

    Gradients accumulate, so call ``zero_grad`` on reused leaves between
    passes. Interior nodes drop their graph links afterwards.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise UsageError("backward needs a scalar loss tensor")
    if not loss.requires_grad:
        raise UsageError("loss is not connected to any tensor that requires grad")
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    leaves = []
    for node in reversed(order):
        if node._parents:
            node._backward()
        else:
            leaves.append(node)
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = lambda: None
    return leaves


def parameters_grad_vector(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([
        (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel() for p in params
    ])
