"""Reverse-mode automatic differentiation over dense float32 arrays.

A ``Tensor`` wraps a numpy float32 ndarray. Every differentiable operation
records a tape node holding its input tensors and a backward closure;
``backward(loss)`` replays the recorded graph in reverse topological order,
so each node is visited exactly once and gradients accumulate additively
into tensors that feed multiple consumers. Visited nodes are released as
the walk proceeds, which clears the tape.

All forward arithmetic is float32 with a fixed evaluation order, so results
are bit-reproducible across runs on one platform.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ShapeError, MiniNetError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation-mode forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class _TapeNode:
    __slots__ = ("inputs", "backward_fn")

    def __init__(self, inputs, backward_fn):
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tensor:
    """Dense float32 array with optional participation in the gradient tape.

    ``grad``, when populated, always has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def record(data, inputs, backward_fn) -> Tensor:
    """Wrap an op result; attach a tape node when gradients are being traced."""
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = _TapeNode(tuple(inputs), backward_fn)
    return out


def _topo_order(root: Tensor):
    # Iterative post-order DFS; recursion would overflow on long graphs.
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor._node is not None:
            for parent in tensor._node.inputs:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    The loss must be a scalar (shape ``()``); the tape is cleared on the way
    out, so a second call on the same graph raises.
    """
    if loss.data.shape != ():
        raise ShapeError(
            f"backward expects a scalar loss, got shape {loss.data.shape}"
        )
    if loss._node is None:
        raise MiniNetError("backward called with an empty tape")
    order = _topo_order(loss)
    loss.grad = np.ones((), dtype=np.float32)
    for tensor in reversed(order):
        node = tensor._node
        if node is None:
            continue
        grads = node.backward_fn(tensor.grad)
        for parent, grad in zip(node.inputs, grads):
            if grad is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = grad.astype(np.float32, copy=False)
            else:
                parent.grad = parent.grad + grad.astype(np.float32, copy=False)
        tensor._node = None


# ---------------------------------------------------------------------------
# Elementwise / reduction operator set
# ---------------------------------------------------------------------------


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def bw(g):
        return g, g

    return record(a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)

    def bw(g):
        return g, -g

    return record(a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, g * ad

    return record(ad * bd, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return g / bd, -g * ad / (bd * bd)

    return record(out, (a, b), bw)


def scale(a: Tensor, k: float) -> Tensor:
    k32 = np.float32(k)

    def bw(g):
        return (g * k32,)

    return record(a.data * k32, (a,), bw)


def affine(a: Tensor, k: float, c: float) -> Tensor:
    """k * a + c, elementwise with float32 constants."""
    k32 = np.float32(k)

    def bw(g):
        return (g * k32,)

    return record(a.data * k32 + np.float32(c), (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # gradient at exactly 0 is 0

    def bw(g):
        return (g * mask,)

    # np.maximum rather than where(mask): NaN must propagate, not vanish
    return record(np.maximum(a.data, np.float32(0.0)), (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))  # e^{-|x|}, never overflows
    s = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z)).astype(np.float32)

    def bw(g):
        return (g * s * (1.0 - s),)

    return record(s, (a,), bw)


def log(a: Tensor) -> Tensor:
    ad = a.data

    def bw(g):
        return (g / ad,)

    return record(np.log(ad), (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the band."""
    ad = a.data
    inside = (ad > lo) & (ad < hi)

    def bw(g):
        return (g * inside,)

    return record(np.clip(ad, np.float32(lo), np.float32(hi)), (a,), bw)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, returned as a scalar tensor (float64 accumulation)."""
    shape = a.data.shape
    out = np.float32(np.sum(a.data, dtype=np.float64))

    def bw(g):
        return (np.broadcast_to(g, shape).astype(np.float32),)

    return record(out, (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(tsum(a), 1.0 / n)
