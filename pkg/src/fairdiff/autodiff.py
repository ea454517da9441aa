"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records the operation that produced it,
so any value built from tensor operations carries its own compute graph.
``backward`` walks that graph once in reverse topological order and writes
exact gradients into the ``grad`` field of every tensor that requires them.
``finite_diff_grad`` is a deliberately independent second route (central
differences on plain numpy functions) used to cross-check the analytic pass.

Everything is float64; there is no device or dtype polymorphism.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "add",
    "sub",
    "mul",
    "matmul",
    "transpose",
    "relu",
    "elu",
    "tanh",
    "powf",
    "poslog",
    "row_softmax",
    "row_log_softmax",
    "concat",
    "tensor_sum",
    "tensor_mean",
    "dropout_mask",
    "apply_mask",
    "backward",
    "gradients",
    "finite_diff_grad",
]

# Large negative constant used instead of -inf in attention masks so that all
# tensor values stay finite; exp() of it underflows to exactly 0.0.
NEG_MASK = -1e30


class ShapeError(ValueError):
    """Raised when an operation receives incompatibly shaped operands."""


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff.

    Tensors created directly from data are graph leaves. Tensors returned by
    the operations below remember their parent tensors and a closure that
    propagates the output gradient to them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backprop = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- operator sugar ---------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backprop) -> Tensor:
    """Build an op result; the graph is only recorded if a parent needs it."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backprop = backprop
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- primitive operations -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backprop(out):
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))

    return _make(data, (a, b), backprop)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from exc

    def backprop(out):
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.data.shape))

    return _make(data, (a, b), backprop)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backprop(out):
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))

    return _make(data, (a, b), backprop)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backprop(out):
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return _make(data, (a, b), backprop)


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")

    def backprop(out):
        _accumulate(a, out.grad.T)

    return _make(a.data.T.copy(), (a,), backprop)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backprop(out):
        _accumulate(a, out.grad * (a.data > 0.0))

    return _make(data, (a,), backprop)


def elu(a) -> Tensor:
    a = _as_tensor(a)
    neg = a.data <= 0.0
    # exp only sees the negative branch; np.where would evaluate it for large
    # positive entries too and overflow.
    capped = np.minimum(a.data, 0.0)
    data = np.where(neg, np.expm1(capped), a.data)

    def backprop(out):
        _accumulate(a, out.grad * np.where(neg, np.exp(capped), 1.0))

    return _make(data, (a,), backprop)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backprop(out):
        _accumulate(a, out.grad * (1.0 - data * data))

    return _make(data, (a,), backprop)


def powf(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent; base must be positive."""
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("powf: nonpositive base entries")
    data = a.data**exponent

    def backprop(out):
        _accumulate(a, out.grad * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backprop)


def poslog(a) -> Tensor:
    """log(x) on strictly positive entries, 0 elsewhere (gradient 0 there)."""
    a = _as_tensor(a)
    pos = a.data > 0.0
    data = np.where(pos, np.log(np.where(pos, a.data, 1.0)), 0.0)

    def backprop(out):
        _accumulate(a, out.grad * np.where(pos, 1.0 / np.where(pos, a.data, 1.0), 0.0))

    return _make(data, (a,), backprop)


def row_softmax(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"row_softmax: expected a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backprop(out):
        inner = (out.grad * data).sum(axis=1, keepdims=True)
        _accumulate(a, data * (out.grad - inner))

    return _make(data, (a,), backprop)


def row_log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"row_log_softmax: expected a matrix, got shape {a.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    data = shifted - lse

    def backprop(out):
        soft = np.exp(data)
        _accumulate(a, out.grad - soft * out.grad.sum(axis=1, keepdims=True))

    return _make(data, (a,), backprop)


def concat(tensors, axis: int = 1) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat: empty tensor list")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backprop(out):
        for p, g in zip(parts, np.split(out.grad, offsets, axis=axis)):
            _accumulate(p, g)

    return _make(data, tuple(parts), backprop)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis: int, keepdims: bool) -> np.ndarray:
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def tensor_sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backprop(out):
        g = np.asarray(out.grad, dtype=np.float64)
        if axis is None:
            _accumulate(a, np.full(a.data.shape, float(g.reshape(()))))
        else:
            _accumulate(a, _expand_reduced(g, a.data.shape, axis, keepdims))

    return _make(data, (a,), backprop)


def tensor_mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    if count == 0:
        raise ShapeError("mean: reduction over zero elements")
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Pre-sampled inverted-dropout mask: 0 with probability rate, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout_mask: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def apply_mask(a, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/scale mask (dropout in training mode)."""
    return mul(a, Tensor(mask))


# -- reverse pass ----------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; each reachable node appears exactly once."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every tensor the scalar ``loss`` depends on.

    Grads of all reachable tensors are overwritten (not accumulated across
    calls); each node's local rule fires exactly once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node)


def gradients(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. the given tensors, as plain arrays."""
    wrt = list(wrt)
    for t in wrt:
        if not t.requires_grad:
            raise ValueError("gradients: tensor does not require grad")
    backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in wrt]


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array.

    Kept independent of the Tensor machinery on purpose: it is the oracle
    the analytic backward pass is checked against.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.copy()
    for i in range(base.size):
        orig = base.reshape(-1)[i]
        base.reshape(-1)[i] = orig + h
        up = float(f(base))
        base.reshape(-1)[i] = orig - h
        down = float(f(base))
        base.reshape(-1)[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad
