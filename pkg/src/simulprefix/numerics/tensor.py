"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations executed while a
:class:`GradTape` is active, and that touch at least one tensor with
``requires_grad``, are appended to the tape together with a closure
mapping output gradients to input gradients. :func:`backward` replays the
tape in reverse order, visiting each recorded operation once.

Leaves (tensors not produced by a recorded operation) accumulate their
gradient into ``Tensor.grad``; intermediate gradients live only for the
duration of the backward pass.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionError

_ACTIVE_TAPES: list["GradTape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @classmethod
    def _wrap(cls, array):
        # no-copy constructor for op outputs
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = False
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: getitem(self, idx)


class _Node:
    __slots__ = ("outputs", "inputs", "backward", "multi")

    def __init__(self, outputs, inputs, backward, multi):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward
        self.multi = multi


class GradTape:
    """Ordered record of differentiable operations.

    Use as a context manager; tapes nest, and only the innermost one
    records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(outputs, inputs, backward, multi=False):
    if not _ACTIVE_TAPES:
        return
    if not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
    _ACTIVE_TAPES[-1].nodes.append(_Node(outputs, inputs, backward, multi))


def backward(loss: Tensor, tape: GradTape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on ``tape``."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    refs = {id(loss): loss}
    produced = set()
    for node in reversed(tape.nodes):
        gouts = [grads.pop(id(o), None) for o in node.outputs]
        produced.update(id(o) for o in node.outputs)
        if all(g is None for g in gouts):
            continue
        if node.multi:
            gouts = [np.zeros_like(o.data) if g is None else g
                     for g, o in zip(gouts, node.outputs)]
            gins = node.backward(*gouts)
        else:
            gins = node.backward(gouts[0])
        for inp, g in zip(node.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                refs[key] = inp
    for key, g in grads.items():
        if key in produced:
            continue
        leaf = refs[key]
        if leaf.grad is None:
            leaf.grad = np.array(g, dtype=np.float64)
        else:
            leaf.grad = leaf.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data + b.data)
    _record((out,), (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data - b.data)
    _record((out,), (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor._wrap(a.data * b.data)
    _record((out,), (a, b),
            lambda g: (_unbroadcast(g * b.data, a.shape),
                       _unbroadcast(g * a.data, b.shape)))
    return out


def neg(a):
    out = Tensor._wrap(-a.data)
    _record((out,), (a,), lambda g: (-g,))
    return out


def sigmoid(a):
    y = expit(a.data)
    out = Tensor._wrap(y)
    _record((out,), (a,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(a):
    y = np.tanh(a.data)
    out = Tensor._wrap(y)
    _record((out,), (a,), lambda g: (g * (1.0 - y * y),))
    return out


def exp(a):
    y = np.exp(a.data)
    out = Tensor._wrap(y)
    _record((out,), (a,), lambda g: (g * y,))
    return out


def log(a):
    x = a.data
    out = Tensor._wrap(np.log(x))
    _record((out,), (a,), lambda g: (g / x,))
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy semantics for 1-D, 2-D and batched 3-D operands."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    x, w = a.data, b.data
    out = Tensor._wrap(np.matmul(x, w))
    if x.ndim == 1:
        _record((out,), (a, b), lambda g: (w @ g, np.outer(x, g)))
    else:
        _record((out,), (a, b),
                lambda g: (_unbroadcast(np.matmul(g, np.swapaxes(w, -1, -2)), a.shape),
                           _unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), b.shape)))
    return out


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis
               for i in items)


def getitem(a, idx):
    out = Tensor._wrap(a.data[idx])
    shape = a.shape
    basic = _is_basic_index(idx)

    def _bw(g):
        z = np.zeros(shape)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    _record((out,), (a,), _bw)
    return out


def embedding(table, ids):
    """Gather rows of ``table`` (V x d) for an integer array of ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    out = Tensor._wrap(table.data[ids])
    shape = table.shape

    def _bw(g):
        z = np.zeros(shape)
        np.add.at(z, ids, g)
        return (z,)

    _record((out,), (table,), _bw)
    return out


def reshape(a, shape):
    src = a.shape
    out = Tensor._wrap(a.data.reshape(shape))
    _record((out,), (a,), lambda g: (g.reshape(src),))
    return out


def swapaxes(a, ax1, ax2):
    out = Tensor._wrap(np.swapaxes(a.data, ax1, ax2))
    _record((out,), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))
    return out


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    _record((out,), tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))
    return out


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor._wrap(np.stack([t.data for t in tensors], axis=axis))
    n = len(tensors)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    _record((out,), tuple(tensors), _bw)
    return out


def unstack(a, axis=0):
    """Split along ``axis`` into a list of tensors; one tape entry for all slices."""
    n = a.shape[axis]
    outs = [Tensor._wrap(np.take(a.data, i, axis=axis)) for i in range(n)]
    _record(tuple(outs), (a,), lambda *gs: (np.stack(gs, axis=axis),), multi=True)
    return outs


# ---------------------------------------------------------------------------
# reductions and normalization
# ---------------------------------------------------------------------------


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    shape = a.shape
    out = Tensor._wrap(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    _record((out,), (a,), _bw)
    return out


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``, stabilized by subtracting the maximum.

    ``mask`` (boolean, broadcastable) marks admissible entries; excluded
    entries get probability exactly zero. Every slice must keep at least
    one admissible entry.
    """
    z = a.data if mask is None else np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._wrap(p)
    _record((out,), (a,),
            lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),))
    return out


def softmax_rows(x):
    """Row-wise softmax of a 2-D tensor."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=-1)
