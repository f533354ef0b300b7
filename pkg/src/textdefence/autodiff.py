"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Node` wraps a numpy array and remembers how it was produced. Calling
:func:`backward` on a scalar node walks the (dynamically built) graph in
reverse topological order and accumulates ``grad`` on every node that
requires it.

The op set is deliberately small: what a mean-pooled text classifier, its
losses and an embedding-space inner maximisation need, and nothing more.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Tensor = np.ndarray


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


def _check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{op}: non-finite value in output")
    return x


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), requires_grad: bool = False,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def leaf(value, name: str | None = None) -> Node:
    """A trainable leaf (``requires_grad=True``)."""
    return Node(np.array(value, dtype=np.float64, copy=True), requires_grad=True, name=name)


def constant(value) -> Node:
    return Node(value)


def _make(value: np.ndarray, parents: Sequence[Node], backward, op: str) -> Node:
    out = Node(_check_finite(value, op), parents)
    if out.requires_grad:
        out._backward = backward
    return out


# ----------------------------------------------------------------------------
# elementwise and linear algebra


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.value + b.value, (a, b), bw, "add")


def add_bias(x: Node, b: Node) -> Node:
    """``x[m×n] + b[n]`` with the bias broadcast over rows."""
    if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")

    def bw(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=0))

    return _make(x.value + b.value, (x, b), bw, "add_bias")


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    return _make(a.value * b.value, (a, b), bw, "mul")


def scale(a: Node, c: float) -> Node:
    def bw(g):
        a._accumulate(g * c)

    return _make(a.value * c, (a,), bw, "scale")


def scale_rows(a: Node, factors) -> Node:
    """Multiply row ``i`` of a 2-D node by the constant ``factors[i]``."""
    f = np.asarray(factors, dtype=np.float64)
    if a.value.ndim != 2 or f.shape != (a.shape[0],):
        raise ValueError(f"scale_rows: expected {a.shape[0]} factors for shape {a.shape}")
    col = f[:, None]

    def bw(g):
        a._accumulate(g * col)

    return _make(a.value * col, (a,), bw, "scale_rows")


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bw, "matmul")


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)

    def bw(g):
        a._accumulate(g * (1.0 - y * y))

    return _make(y, (a,), bw, "tanh")


def relu(a: Node) -> Node:
    mask = a.value > 0

    def bw(g):
        a._accumulate(g * mask)

    return _make(a.value * mask, (a,), bw, "relu")


def absolute(a: Node) -> Node:
    # sign(0) = 0 in numpy; at the kink the subgradient 0 is used
    s = np.sign(a.value)

    def bw(g):
        a._accumulate(g * s)

    return _make(np.abs(a.value), (a,), bw, "abs")


def reshape(a: Node, shape: tuple[int, ...]) -> Node:
    old = a.shape

    def bw(g):
        a._accumulate(g.reshape(old))

    return _make(a.value.reshape(shape), (a,), bw, "reshape")


def sum_all(a: Node) -> Node:
    def bw(g):
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(np.asarray(a.value.sum()), (a,), bw, "sum")


def mean(a: Node) -> Node:
    n = a.value.size

    def bw(g):
        a._accumulate(np.broadcast_to(g / n, a.shape))

    return _make(np.asarray(a.value.mean()), (a,), bw, "mean")


def embedding_lookup(table: Node, ids) -> Node:
    """Rows of ``table`` selected by the integer array ``ids``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("embedding_lookup: ids must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding_lookup: id out of range for table of {table.shape[0]} rows")

    def bw(g):
        if table.requires_grad:
            acc = np.zeros_like(table.value)
            np.add.at(acc, idx, g)
            table._accumulate(acc)

    return _make(table.value[idx], (table,), bw, "embedding_lookup")


# ----------------------------------------------------------------------------
# probability ops; 1-D inputs are a single distribution, 2-D inputs are rows


def _softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_np(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_array(z) -> np.ndarray:
    """Plain-numpy softmax over the last axis (no graph)."""
    z = np.asarray(z, dtype=np.float64)
    _check_finite(z, "softmax")
    return _softmax_np(z)


def entropy_array(p) -> np.ndarray:
    """Natural-log entropy over the last axis, with 0·ln 0 = 0 (no graph)."""
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any():
        raise ValueError("entropy: negative probability")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def softmax(z: Node) -> Node:
    if z.shape[-1] < 2:
        raise ValueError("softmax: need at least two entries")
    _check_finite(z.value, "softmax input")
    p = _softmax_np(z.value)

    def bw(g):
        z._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (z,), bw, "softmax")


def entropy(p: Node) -> Node:
    """``H(p) = -Σ p ln p`` per distribution (scalar for 1-D input)."""
    pv = p.value
    if (pv < 0).any():
        raise ValueError("entropy: negative probability")
    h = entropy_array(pv)
    safe = np.where(pv > 0, pv, 1.0)

    def bw(g):
        gcol = np.asarray(g)[..., None] if pv.ndim > 1 else g
        # d/dp of -p ln p is -(ln p + 1); zero entries contribute no gradient
        p._accumulate(np.where(pv > 0, -(np.log(safe) + 1.0), 0.0) * gcol)

    return _make(np.asarray(h), (p,), bw, "entropy")


def cross_entropy(logits: Node, target) -> Node:
    """``-Σ target · log_softmax(logits)``; rows are averaged for 2-D input."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"cross_entropy: target shape {t.shape} != logits shape {logits.shape}")
    _check_finite(logits.value, "cross_entropy input")
    logp = _log_softmax_np(logits.value)
    p = np.exp(logp)
    rows = 1 if logits.value.ndim == 1 else logits.shape[0]
    tsum = t.sum(axis=-1, keepdims=True)
    loss = -(t * logp).sum() / rows

    def bw(g):
        logits._accumulate(g * (p * tsum - t) / rows)

    return _make(np.asarray(loss), (logits,), bw, "cross_entropy")


def l2_project(delta, max_norm: float) -> np.ndarray:
    """Scale ``delta`` onto the l2 ball of radius ``max_norm`` if it lies outside."""
    if max_norm < 0:
        raise ValueError("l2_project: max_norm must be non-negative")
    d = np.asarray(delta, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm <= max_norm:
        return d.copy()
    return d * (max_norm / norm)


# ----------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Node) -> list[Node]:
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
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(root: Node) -> None:
    """Populate ``grad`` on every node reachable from the scalar ``root``."""
    if root.value.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topo_order(root)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ----------------------------------------------------------------------------
# optimisers


def sgd_step(params: Iterable[Node], lr: float) -> None:
    for p in params:
        if p.grad is not None:
            p.value -= lr * p.grad


class Adam:
    """Adam with bias correction. State is keyed by parameter position."""

    def __init__(self, params: Sequence[Node], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.value -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function; used as a test oracle."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
