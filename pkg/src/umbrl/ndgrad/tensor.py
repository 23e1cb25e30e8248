"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a :class:`Tensor` that has a gradient-requiring input
records a node holding its parents and a closure mapping the output gradient
to parent gradients. :func:`backward` walks that graph in reverse topological
order and then releases it, so each forward pass builds a fresh tape.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_live", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._live: tuple = ()
        self.name = name

    # -- introspection -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None,
            )

        return _node(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            return (
                _unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
            )

        return _node(a.data - b.data, (a, b), bw)

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            return (
                _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
            )

        return _node(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _wrap(other)

        def bw(g):
            return (
                _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
                if b.requires_grad
                else None,
            )

        return _node(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __neg__(self):
        a = self
        return _node(-a.data, (a,), lambda g: (-g,))

    def __pow__(self, p: float):
        a = self
        p = float(p)

        def bw(g):
            return (g * p * a.data ** (p - 1.0),)

        return _node(a.data**p, (a,), bw)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)

    def __getitem__(self, idx):
        a = self
        basic = _is_basic_index(idx)

        def bw(g):
            out = np.zeros_like(a.data)
            if basic:
                out[idx] += g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return _node(a.data[idx], (a,), bw)

    # -- reductions and shape ------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.data.shape),)

        return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[ax] for ax in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))

    def transpose(self, *axes):
        a = self
        axes = axes or tuple(reversed(range(a.data.ndim)))
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))

    @property
    def T(self):
        return self.transpose()

    # -- elementwise ------------------------------------------------------
    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)


class Parameter(Tensor):
    """A trainable leaf. ``frozen`` parameters are skipped by the optimizer."""

    __slots__ = ("frozen",)

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.frozen = False


# ---------------------------------------------------------------------------
# graph helpers


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    return _wrap(x)


def _node(data, parents: tuple, backward: Callable) -> Tensor:
    if _GRAD_ENABLED:
        for p in parents:
            if p.requires_grad:
                out = Tensor(data, requires_grad=True)
                out._parents = parents
                out._backward = backward
                # which parents carried gradients when recorded (frozen_graph may toggle later)
                out._live = tuple(q.requires_grad for q in parents)
                return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, live in zip(node._parents, node._live):
            if live and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict:
    """Reverse-mode gradients of a scalar ``loss``.

    Returns a dict mapping each reached gradient-requiring leaf to an ndarray
    of its shape. If ``params`` is given, the result holds exactly those
    tensors, with zeros for any the loss does not depend on. The recorded
    graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    leaf_grads: dict = {}
    if loss.requires_grad:
        order = _topo_order(loss)
        pending = {id(loss): np.ones_like(loss.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                leaf_grads[node] = g
                continue
            for p, gp, live in zip(node._parents, node._backward(g), node._live):
                if gp is None or not live:
                    continue
                k = id(p)
                prev = pending.get(k)
                pending[k] = gp if prev is None else prev + gp
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._live = ()
    if params is None:
        return {k: np.array(v) for k, v in leaf_grads.items()}
    out = {}
    for p in params:
        g = leaf_grads.get(p)
        out[p] = np.zeros_like(p.data) if g is None else np.array(g, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# functional ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.multiply.outer(g, b.data)
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim >= 2:
                k = a.data.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, b.data.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), bw)


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    x = _wrap(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def tanh(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def elu(x: Tensor) -> Tensor:
    x = _wrap(x)
    pos = x.data > 0
    out = np.where(pos, x.data, np.expm1(np.minimum(x.data, 0.0)))
    return _node(out, (x,), lambda g: (np.where(pos, g, g * (out + 1.0)),))


def softplus(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.logaddexp(0.0, x.data)
    return _node(out, (x,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * x.data)),))


def square(x: Tensor) -> Tensor:
    x = _wrap(x)
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def sqrt(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (g / (2.0 * out),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient is zero wherever the clamp is active."""
    x = _wrap(x)
    mask = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


def maximum(x: Tensor, floor: float) -> Tensor:
    """``max(x, floor)`` with zero gradient where the floor wins (ties included)."""
    x = _wrap(x)
    mask = x.data > floor
    return _node(np.where(mask, x.data, floor), (x,), lambda g: (g * mask,))


def where(cond, a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    cond = np.asarray(cond, dtype=bool)

    def bw(g):
        return (
            _unbroadcast(np.where(cond, g, 0.0), a.data.shape) if a.requires_grad else None,
            _unbroadcast(np.where(cond, 0.0, g), b.data.shape) if b.requires_grad else None,
        )

    return _node(np.where(cond, a.data, b.data), (a, b), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    sizes = [t.data.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        parts = np.split(g, cuts, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(parts, ts))

    return _node(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] if t.requires_grad else None for i, t in enumerate(ts))

    return _node(np.stack([t.data for t in ts], axis=axis), ts, bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _node(out, (x,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)
    return _node(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def stop_gradient(x) -> Tensor:
    return Tensor(x.data if isinstance(x, Tensor) else x)


def straight_through_onehot(probs: Tensor, rng: np.random.Generator | None = None) -> Tensor:
    """One-hot categorical sample over the last axis with a straight-through gradient.

    The forward value is the sampled one-hot vector; the backward pass routes
    the incoming gradient unchanged to ``probs``. With ``rng=None`` the mode
    (argmax) is taken instead of a sample.
    """
    probs = _wrap(probs)
    p = probs.data
    if rng is None:
        idx = p.argmax(axis=-1)
    else:
        u = rng.random(p.shape[:-1] + (1,))
        idx = (np.cumsum(p, axis=-1) < u).sum(axis=-1)
        idx = np.minimum(idx, p.shape[-1] - 1)
    onehot = (np.arange(p.shape[-1]) == idx[..., None]).astype(np.float64)
    return _node(onehot, (probs,), lambda g: (g,))
