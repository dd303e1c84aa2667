"""Minimal reverse-mode differentiation over float64 numpy arrays.

Only the handful of operations the tracker heads need. Each operation
records its inputs and a vector-Jacobian closure on the output node;
`backward` replays them in reverse topological order, so a node feeding
several consumers accumulates every contribution. Nodes built purely
from constants skip recording, which makes the same code path cheap at
inference time.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data, parents, vjp) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the input had before broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is a 2-D weight matrix and a has one or two leading
    batch axes."""
    if b.data.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    out = a.data @ b.data
    lead = tuple(range(a.data.ndim - 1))

    def vjp(g):
        ga = g @ b.data.T
        gb = np.tensordot(a.data, g, axes=(lead, lead))
        return ga, gb

    return _make(out, (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _make(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), vjp)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def window_stack(m: Tensor, n: int) -> Tensor:
    """All length-n windows of a (B, R, C) tensor, flattened per window
    to (B, R-n+1, n*C)."""
    B, R, C = m.data.shape
    P = R - n + 1
    out = np.concatenate([m.data[:, o : P + o, :] for o in range(n)], axis=2)

    def vjp(g):
        gm = np.zeros_like(m.data)
        for o in range(n):
            gm[:, o : P + o, :] += g[:, :, o * C : (o + 1) * C]
        return (gm,)

    return _make(out, (m,), vjp)


def masked_max(a: Tensor, mask: np.ndarray) -> Tensor:
    """Max over axis 1 of a (B, P, L) tensor, restricted to positions
    where the (B, P) mask is true; gradient flows to the first maximum."""
    neg = np.where(mask[:, :, None], a.data, -np.inf)
    idx = neg.argmax(axis=1)
    out = np.take_along_axis(neg, idx[:, None, :], axis=1)[:, 0, :]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[:, None, :], g[:, None, :], axis=1)
        return (ga,)

    return _make(out, (a,), vjp)


def unsqueeze_last(t: Tensor) -> Tensor:
    out = t.data[..., None]

    def vjp(g):
        return (g[..., 0],)

    return _make(out, (t,), vjp)


def softmax_cross_entropy(logits: Tensor, gold: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy of (B, C) logits against integer labels.
    Returns the scalar loss node and the softmax probabilities."""
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    B = probs.shape[0]
    picked = np.maximum(probs[np.arange(B), gold], 1e-12)
    loss = -np.log(picked).mean()

    def vjp(g):
        onehot = np.zeros_like(probs)
        onehot[np.arange(B), gold] = 1.0
        return (g * (probs - onehot) / B,)

    return _make(loss, (logits,), vjp), probs


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain max-subtracted softmax over the last axis (no gradient)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor the loss depends on."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
