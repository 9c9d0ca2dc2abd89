"""Minimal tape-based reverse-mode gradient engine over numpy arrays.

Only the operations needed by the divergence and training losses are
provided: elementwise arithmetic, matmul, exp/log/tanh, reductions,
row-wise (log-)softmax, and Gaussian Gram construction. Nodes form an
implicit DAG; ``backward`` visits every reachable node exactly once in
reverse topological order. A graph is built per training step and never
shared across threads.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError
from .linalg import pairwise_sq_dists

__all__ = ["Node", "constant", "backward", "gradients"]


class Node:
    """One value in the computation graph.

    ``value`` is the forward result, ``grad`` the accumulated adjoint
    (same shape as ``value``), and ``op`` a short provenance tag.
    """

    __slots__ = ("value", "parents", "vjps", "grad", "op")

    def __init__(self, value, parents=(), vjps=(), op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    # Operators delegate to the module-level functions so that plain
    # arrays and floats mix freely with nodes.
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

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(value, op="const") -> Node:
    return Node(value, op=op)


def as_node(value) -> Node:
    return value if isinstance(value, Node) else Node(value, op="const")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast to reach ``grad.shape``."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value + b.value
    return Node(
        out,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
        op="add",
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value - b.value
    return Node(
        out,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
        op="sub",
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value * b.value
    return Node(
        out,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
        op="mul",
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return Node(
        out,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
        op="div",
    )


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    out = a.value @ b.value
    return Node(
        out,
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
        op="matmul",
    )


def transpose(a) -> Node:
    a = as_node(a)
    return Node(a.value.T, parents=(a,), vjps=(lambda g: g.T,), op="transpose")


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, parents=(a,), vjps=(lambda g: g * out,), op="exp")


def log(a) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), parents=(a,), vjps=(lambda g: g / a.value,), op="log")


def clamped_log(a, floor: float = 1e-12) -> Node:
    """log(max(x, floor)); the gradient is zero where the clamp is active."""
    a = as_node(a)
    clamped = np.maximum(a.value, floor)
    active = a.value > floor
    return Node(
        np.log(clamped),
        parents=(a,),
        vjps=(lambda g: np.where(active, g / clamped, 0.0),),
        op="clamped_log",
    )


def clamp_min(a, floor: float) -> Node:
    a = as_node(a)
    active = a.value > floor
    return Node(
        np.maximum(a.value, floor),
        parents=(a,),
        vjps=(lambda g: np.where(active, g, 0.0),),
        op="clamp_min",
    )


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)
    return Node(out, parents=(a,), vjps=(lambda g: g * (1.0 - out * out),), op="tanh")


def nsum(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Node(out, parents=(a,), vjps=(vjp,), op="sum")


def nmean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size if axis is None else a.value.shape[axis]

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape) / count

    return Node(out, parents=(a,), vjps=(vjp,), op="mean")


def log_softmax(a) -> Node:
    """Row-wise log-softmax with log-sum-exp stabilization (2-D input)."""
    a = as_node(a)
    x = a.value
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return g - np.exp(out) * g.sum(axis=1, keepdims=True)

    return Node(out, parents=(a,), vjps=(vjp,), op="log_softmax")


def softmax(a) -> Node:
    a = as_node(a)
    x = a.value
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return s * (g - (g * s).sum(axis=1, keepdims=True))

    return Node(s, parents=(a,), vjps=(vjp,), op="softmax")


def rbf_gram(a, b, sigma: float) -> Node:
    """Gaussian Gram matrix exp(-||a_i - b_j||^2 / (2 sigma^2)) as one
    primitive, differentiable with respect to both sample matrices."""
    a, b = as_node(a), as_node(b)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    k = np.exp(-pairwise_sq_dists(a.value, b.value) / (2.0 * sigma * sigma))
    inv_s2 = 1.0 / (sigma * sigma)

    def vjp_a(g):
        w = g * k
        return inv_s2 * (w @ b.value - w.sum(axis=1, keepdims=True) * a.value)

    def vjp_b(g):
        w = g * k
        return inv_s2 * (w.T @ a.value - w.sum(axis=0)[:, None] * b.value)

    return Node(k, parents=(a, b), vjps=(vjp_a, vjp_b), op="rbf_gram")


def _topo_order(root: Node) -> Sequence[Node]:
    """Iterative post-order DFS; each node appears once."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Accumulate adjoints into ``node.grad`` for every node reachable
    from ``root``. The root must be scalar-valued (size 1)."""
    if root.value.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.value.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.grad is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(node.grad)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64, copy=True)
            else:
                parent.grad += contrib


def gradients(root: Node, leaves: Iterable[Node]) -> list[np.ndarray]:
    """Run backward once and return the adjoints of ``leaves`` (zeros for
    leaves the loss does not depend on)."""
    backward(root)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]
