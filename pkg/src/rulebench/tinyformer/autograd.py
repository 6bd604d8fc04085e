"""Minimal reverse-mode differentiation over numpy arrays (float64).

Each op builds an output :class:`Tensor` holding its parents and a closure
that pushes the output gradient back to them. :func:`backward` runs those
closures in reverse topological order and then frees the graph, so a
second call on the same loss raises.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64


class GraphError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._consumed = False
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ------------------------------------------------------------------ ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _node(a.data + b.data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, -g)
    return _node(-a.data, (a,), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))
    return _node(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _acc(a, g * c)
    return _node(a.data * c, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return _node(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; weight grads summed over leading axes."""
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _acc(x, (g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            _acc(w, x2.T @ g2)
        if b is not None and b.requires_grad:
            _acc(b, g2.sum(axis=0))
    parents = (x, w) if b is None else (x, w, b)
    return _node(out.reshape(*lead, -1), parents, bw)


def reshape(a: Tensor, shape) -> Tensor:
    def bw(g):
        _acc(a, g.reshape(a.shape))
    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bw(g):
        _acc(a, g.transpose(inv))
    return _node(a.data.transpose(axes), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bw(g):
        _acc(a, g * mask)
    return _node(a.data * mask, (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, 2.0 * a.data * g)
    return _node(a.data * a.data, (a,), bw)


def total(a: Tensor) -> Tensor:
    def bw(g):
        _acc(a, np.broadcast_to(g, a.shape))
    return _node(np.sum(a.data), (a,), bw)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)

    def bw(g):
        flat = ids.reshape(-1)
        onehot = np.zeros((flat.size, weight.shape[0]), dtype=DTYPE)
        onehot[np.arange(flat.size), flat] = 1.0
        _acc(weight, onehot.T @ g.reshape(flat.size, -1))
    return _node(weight.data[ids], (weight,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        if gain.requires_grad:
            _acc(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            _acc(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            _acc(x, inv * (gx - gx.mean(axis=-1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
    return _node(xhat * gain.data + bias.data, (x, gain, bias), bw)


def masked_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True = keep) zeroes the rest.

    Raises when any row has no unmasked entry.
    """
    s = scores.data
    if mask is not None:
        mask = np.broadcast_to(mask, s.shape)
        if not mask.any(axis=-1).all():
            raise GraphError("attention row with every position masked")
        s = np.where(mask, s, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _acc(scores, p * (g - (g * p).sum(axis=-1, keepdims=True)))
    return _node(p, (scores,), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        _acc(x, g * keep)
    return _node(x.data * keep, (x,), bw)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over positions with nonzero weight.

    ``weights`` is a 0/1 array over target positions (0 = padding).
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {logits.shape[:-1]} and targets {targets.shape} disagree")
    if weights is None:
        weights = np.ones(targets.shape, dtype=DTYPE)
    weights = np.asarray(weights, dtype=DTYPE)
    count = weights.sum()
    if count <= 0:
        raise ValueError("no non-padding target positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * weights).sum() / count

    def bw(g):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        _acc(logits, g * (p - onehot) * (weights / count)[..., None])
    return _node(loss, (logits,), bw)


# ------------------------------------------------------------- backward

def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``, then free the graph."""
    if loss._consumed:
        raise GraphError("backward called twice on the same graph; run the forward pass again")
    loss._consumed = True
    if not loss.requires_grad:
        return
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node.grad = None
