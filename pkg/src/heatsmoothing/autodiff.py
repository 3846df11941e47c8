"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation on :class:`Tensor` records its parents and a local
vector-Jacobian product.  :func:`grad` walks the recorded graph once in
reverse topological order and returns the adjoints of the requested leaves.
Nothing is accumulated on the tensors themselves, so calling :func:`grad`
twice on the same graph gives the same answer.

Only the shapes an MLP needs are supported: scalars, vectors, matrices and a
matrix plus row-vector (bias) broadcast.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "grad",
    "backward",
    "detach",
    "free",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "tanh",
    "log",
    "exp",
    "logsumexp",
    "softmax",
    "log_softmax",
    "sum",
    "mean",
    "square",
    "dot",
    "norm_sq",
    "reshape",
]

_Backward = Callable[[np.ndarray], Sequence[np.ndarray]]


class Tensor:
    """A node in the computation graph.

    Leaves are built with :func:`tensor` (or ``Tensor(data)``); interior nodes
    are produced by the operations in this module.  ``data`` of a leaf may be
    overwritten in place between forward passes (this is how optimizers
    update parameters), since graphs are rebuilt on every pass.
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "_vjp", "freed", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, _parents: tuple = (),
                 _op: str = "leaf", _vjp: _Backward | None = None):
        arr = np.array(data, dtype=np.float64)
        if not _parents:
            if arr.size == 0:
                raise ValueError("tensor must have at least one element")
            if not np.all(np.isfinite(arr)):
                raise ValueError("leaf tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.op = _op
        self.parents = _parents
        self._vjp = _vjp
        self.freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by a Python scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(value: np.ndarray, parents: tuple, op: str, vjp: _Backward) -> Tensor:
    return Tensor(value, _parents=parents, _op=op, _vjp=vjp)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    if sa == () or a.data.size == 1 and a.data.ndim <= 1:
        return sb
    if sb == () or b.data.size == 1 and b.data.ndim <= 1:
        return sa
    # matrix with a row vector (bias)
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return sa
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return sb
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0 or int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    # row-vector bias: sum over the batch axis
    return g.sum(axis=0).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data
    return _node(out, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("sub", a, b)
    out = a.data - b.data
    return _node(out, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a Python scalar."""
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        c = float(a)
        return _node(c * b.data, (b,), "scale", lambda g: (c * g,))
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        c = float(b)
        return _node(c * a.data, (a,), "scale", lambda g: (c * g,))
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("mul", a, b)
    out = a.data * b.data
    return _node(out, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), "neg", lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix-matrix, matrix-vector or vector-matrix product."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or (a.data.ndim == 1 and b.data.ndim == 1):
        raise ValueError(f"matmul: unsupported shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        A, B = a.data, b.data
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:  # matrix @ vector
            return np.outer(g, B), A.T @ g
        return B @ g, np.outer(A, g)  # vector @ matrix

    return _node(out, (a, b), "matmul", vjp)


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _node(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive input")
    return _node(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _node(e, (a,), "exp", lambda g: (g * e,))


def logsumexp(a: Tensor, axis: int = 0) -> Tensor:
    """``log(sum(exp(a)))`` along ``axis``, stabilized by the maximum."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    w = e / s
    return _node(out, (a,), "logsumexp", lambda g: (np.expand_dims(g, axis) * w,))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    return _node(s, (a,), "softmax",
                 lambda g: (s * (g - (g * s).sum(axis=-1, keepdims=True)),))


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis, computed with max subtraction."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _node(out, (a,), "log_softmax",
                 lambda g: (g - s * g.sum(axis=-1, keepdims=True),))


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(out, (a,), "sum", vjp)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def square(a: Tensor) -> Tensor:
    x = a.data
    return _node(x * x, (a,), "square", lambda g: (2.0 * x * g,))


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: incompatible shapes {a.shape} and {b.shape}")
    return _node(np.dot(a.data, b.data), (a, b), "dot",
                 lambda g: (g * b.data, g * a.data))


def norm_sq(a: Tensor, axis: int | None = None) -> Tensor:
    """Squared L2 norm, over everything or along ``axis``."""
    return sum(square(a), axis)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)
    return _node(out, (a,), "reshape", lambda g: (g.reshape(old),))


def detach(a: Tensor) -> Tensor:
    """Same value, cut from the graph: nothing upstream receives gradient."""
    return Tensor(a.data.copy(), _op="detach")


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def grad(root: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Adjoints of ``root`` with respect to leaves.

    ``root`` must hold a single element.  With ``wrt`` given, the result has
    exactly those keys (zeros for anything unreachable); otherwise it holds
    every reachable leaf with ``requires_grad``.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    adj: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(_topo_order(root)):
        g = adj.pop(id(node), None)
        if node.is_leaf:
            if node.requires_grad:
                leaves[id(node)] = node
                if g is not None:
                    adj[id(node)] = g
            continue
        if node.freed:
            raise RuntimeError(f"backward through freed graph (node {node.op})")
        if g is None:
            continue
        for p, gp in zip(node.parents, node._vjp(g)):
            if not p.requires_grad:
                continue
            if id(p) in adj:
                adj[id(p)] = adj[id(p)] + gp
            else:
                adj[id(p)] = gp
    if wrt is None:
        return {leaf: adj.get(i, np.zeros_like(leaf.data)) for i, leaf in leaves.items()}
    return {t: adj.get(id(t), np.zeros_like(t.data)) for t in wrt}


backward = grad


def free(root: Tensor) -> None:
    """Release the closures held by every interior node under ``root``."""
    stack, seen = [root], set()
    while stack:
        node = stack.pop()
        if id(node) in seen or node.is_leaf:
            continue
        seen.add(id(node))
        node._vjp = None
        node.freed = True
        stack.extend(node.parents)
