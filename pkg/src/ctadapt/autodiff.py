"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the domain-adversarial MLP needs are provided. Every op
returns a new :class:`Tensor` that remembers its parents and a closure
mapping the upstream gradient to parent gradients. :func:`backward` walks
the graph once in reverse topological order and accumulates into the
``grad`` of leaf tensors that require it.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, const) -> "Tensor":
        return scale(self, const)

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        return total(self)


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad for t in ts)


def _node(data, parents, fn) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, True, parents, fn)
    return Tensor(data)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, const) -> Tensor:
    """Elementwise product with a constant (scalar or broadcastable array)."""
    c = np.asarray(const, dtype=np.float64)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def total(a: Tensor) -> Tensor:
    return _node(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape),))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (B, I), ``w`` (I, O), ``b`` (O,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.shape != (w.shape[1],):
        raise ValueError(f"linear: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data
    return _node(xd @ wd + b.data, (x, w, b),
                 lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: kept units scaled by ``1 / (1 - p)``; identity when not training."""
    if not 0 <= p < 1:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _node(x.data * keep, (x,), lambda g: (g * keep,))


def gradient_reversal(x: Tensor, lam: float) -> Tensor:
    """Identity forward; the backward pass multiplies the gradient by ``-lam``."""
    return _node(x.data.copy(), (x,), lambda g: (-lam * g,))


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def softmax_cross_entropy(logits: Tensor, labels, weights=None) -> tuple[Tensor, Tensor]:
    """Per-instance cross-entropy ``sigma`` and the weighted sum ``sum(w * sigma)``.

    Labels are only validated (and only looked at) where the weight is
    nonzero, so masked instances may carry any sentinel.
    """
    z = logits.data
    n, c = z.shape
    labels = np.asarray(labels)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if labels.shape != (n,) or w.shape != (n,):
        raise ValueError("labels and weights must have one entry per row of logits")
    if np.any(w < 0):
        raise ValueError("instance weights must be nonnegative")
    live = w != 0
    if np.any((labels[live] < 0) | (labels[live] >= c)):
        raise ValueError(f"labels must lie in [0, {c})")
    safe = np.where(live, labels, 0).astype(np.int64)
    logp = log_softmax(z)
    rows = np.arange(n)
    sigma_data = -logp[rows, safe]
    onehot = np.zeros_like(z)
    onehot[rows, safe] = 1.0
    dsigma = np.exp(logp) - onehot  # d sigma_i / d logits_i

    per_instance = _node(sigma_data, (logits,), lambda g: (g[:, None] * dsigma,))
    return per_instance, (per_instance * w).sum()


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_bce(logits: Tensor, targets) -> Tensor:
    """Per-instance ``max(z, 0) - z d + log(1 + exp(-|z|))``."""
    z = logits.data
    d = np.asarray(targets, dtype=np.float64)
    if d.shape != z.shape:
        raise ValueError(f"targets shape {d.shape} != logits shape {z.shape}")
    out = np.maximum(z, 0) - z * d + np.log1p(np.exp(-np.abs(z)))
    dz = sigmoid(z) - d
    return _node(out, (logits,), lambda g: (g * dz,))


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into every leaf with ``requires_grad``.

    A graph can be traversed only once; a second call raises ``RuntimeError``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise RuntimeError("backward already ran through this graph; rebuild it first")
    if not loss.requires_grad:
        return

    order, seen = [], set()
    stack = [(loss, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node._spent = True
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
