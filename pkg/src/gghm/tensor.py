"""Minimal reverse-mode autodiff over dense numpy arrays.

Eager evaluation: every op computes its numpy result immediately and, when
gradients are required, records a backward closure on the output tensor.
``Tensor.backward()`` walks the recorded graph in reverse topological order.
Elementwise ops follow numpy broadcasting (gradients are summed back to the
operand shapes); matmul broadcasts leading batch dims only.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import DimensionError, NonFiniteError

_GRAD_ENABLED = True
_CHECK_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (forward values only)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def check_finite():
    """Raise NonFiniteError from any op that produces NaN/Inf in the block."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = prev


class Tensor:
    """A dense array plus optional gradient buffer and backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- gradient machinery -------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Reverse-mode sweep from this scalar tensor."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


# -- helpers ----------------------------------------------------------------


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward, op_name):
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op_name}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g, shape):
    """Sum gradient g back down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b):
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward, "add")


def sub(a, b):
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward, "sub")


def mul(a, b):
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward, "mul")


def div(a, b):
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward, "div")


def pow_scalar(a, p):
    """Elementwise a**p for a python scalar exponent."""
    data = a.data ** p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    return _make(data, (a,), backward, "pow_scalar")


def abs_(a):
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _make(data, (a,), backward, "abs")


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward, "exp")


def log(a):
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), backward, "log")


def sqrt(a):
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            denom = np.where(data == 0, 1.0, data)
            a._accumulate(g * 0.5 / denom * (data != 0))

    return _make(data, (a,), backward, "sqrt")


# -- activations ---------------------------------------------------------------


def relu(a):
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return _make(data, (a,), backward, "relu")


def leaky_relu(a, slope=0.01):
    data = np.where(a.data > 0, a.data, slope * a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, slope))

    return _make(data, (a,), backward, "leaky_relu")


def sigmoid(a):
    data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward, "sigmoid")


# -- linear algebra -------------------------------------------------------------


def matmul(a, b):
    """Batched matrix product; leading dims broadcast, inner dims must agree."""
    a = _wrap(a, getattr(b, "dtype", None))
    b = _wrap(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward, "matmul")


# -- shape ops -------------------------------------------------------------------


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward, "reshape")


def swapaxes(a, ax1, ax2):
    data = np.swapaxes(a.data, ax1, ax2)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, ax1, ax2))

    return _make(data, (a,), backward, "swapaxes")


def transpose(a, axes):
    data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(data, (a,), backward, "transpose")


def concat(tensors, axis):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(data, tuple(tensors), backward, "concat")


def slice_axis(a, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[index] = g
            a._accumulate(buf)

    return _make(data, (a,), backward, "slice_axis")


def take(a, indices, axis=0):
    """Gather along one axis with an integer index array."""
    indices = np.asarray(indices)
    data = np.take(a.data, indices, axis=axis)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            moved = np.moveaxis(buf, axis, 0)
            gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                             tuple(range(indices.ndim)))
            np.add.at(moved, indices, gm)
            a._accumulate(buf)

    return _make(data, (a,), backward, "take")


def take_along_last(a, indices):
    """Gather along the last axis with per-row indices (same rank as a)."""
    indices = np.asarray(indices)
    data = np.take_along_axis(a.data, indices, axis=-1)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            # scatter-add handles repeated indices, not just permutations
            idx = np.indices(indices.shape)
            np.add.at(buf, tuple(idx[:-1]) + (indices,), g)
            a._accumulate(buf)

    return _make(data, (a,), backward, "take_along_last")


def repeat_leading(a, n):
    """Stack n copies of a along a new leading axis: shape -> (n, *a.shape)."""
    data = np.broadcast_to(a.data, (n,) + a.shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=0))

    return _make(data, (a,), backward, "repeat_leading")


def expand_axis(a, axis, n):
    """Insert a new axis of length n (broadcast copy)."""
    expanded = np.expand_dims(a.data, axis)
    shape = list(expanded.shape)
    shape[axis] = n
    data = np.broadcast_to(expanded, shape).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum(axis=axis))

    return _make(data, (a,), backward, "expand_axis")


# -- reductions ---------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(ge, a.shape).copy())

    return _make(np.asarray(data), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        count = a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def min_(a, axis):
    """Min along an axis; gradient routes to the (first) argmin entries."""
    idx = np.argmin(a.data, axis=axis)
    data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    data = np.squeeze(data, axis=axis)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.put_along_axis(buf, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis=axis)
            a._accumulate(buf)

    return _make(data, (a,), backward, "min")


def sort_last(a):
    """Ascending sort along the last axis (gradients follow the permutation)."""
    order = np.argsort(a.data, axis=-1, kind="stable")
    return take_along_last(a, order)


# -- softmax family --------------------------------------------------------------


def softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (g - dot))

    return _make(data, (a,), backward, "softmax")


def softmax_cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[target].

    logits: [b, n]; targets: int array [b] with every value in [0, n).
    """
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise DimensionError(
            f"softmax_cross_entropy expects [batch, classes], got {logits.shape}")
    b, n = logits.shape
    if targets.shape != (b,):
        raise DimensionError(
            f"targets shape {targets.shape} does not match batch {b}")
    if targets.min() < 0 or targets.max() >= n:
        raise IndexError(
            f"target out of range [0, {n}): {targets.min()}..{targets.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    rows = np.arange(b)
    data = np.asarray(-logp[rows, targets].mean(), dtype=logits.dtype)

    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[rows, targets] -= 1.0
            logits._accumulate(g * grad / b)

    return _make(data, (logits,), backward, "softmax_cross_entropy")


# -- distances ---------------------------------------------------------------------


def pairwise_distance(a, b, metric="euclidean"):
    """All-pairs distances along the last two axes.

    a: [..., m, c]; b: [..., n, c] with identical leading dims -> [..., m, n].
    euclidean: ||a_i - b_j||; one_minus_cosine: 1 - cos(a_i, b_j).
    The euclidean path reduces with numpy's last-axis sum so values are
    bit-reproducible against a per-pair np.sum oracle.
    """
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(
            f"pairwise_distance channel dims disagree: {a.shape} vs {b.shape}")
    if metric == "euclidean":
        diff = a.data[..., :, None, :] - b.data[..., None, :, :]
        sq = (diff * diff).sum(axis=-1)
        data = np.sqrt(sq)

        def backward(g):
            safe = np.where(data == 0, 1.0, data)
            scale = (g / safe) * (data != 0)
            gd = scale[..., None] * diff
            if a.requires_grad:
                a._accumulate(_unbroadcast(gd.sum(axis=-2), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-gd.sum(axis=-3), b.shape))

        return _make(data, (a, b), backward, "pairwise_distance")
    if metric == "one_minus_cosine":
        eps = 1e-12
        na = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
        nb = np.sqrt((b.data * b.data).sum(axis=-1, keepdims=True))
        an = a.data / np.maximum(na, eps)
        bn = b.data / np.maximum(nb, eps)
        cos = np.matmul(an, np.swapaxes(bn, -1, -2))
        data = 1.0 - cos

        def backward(g):
            if a.requires_grad:
                gan = -np.matmul(g, bn)
                ga = (gan - an * (gan * an).sum(axis=-1, keepdims=True)) / np.maximum(na, eps)
                a._accumulate(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gbn = -np.matmul(np.swapaxes(g, -1, -2), an)
                gb = (gbn - bn * (gbn * bn).sum(axis=-1, keepdims=True)) / np.maximum(nb, eps)
                b._accumulate(_unbroadcast(gb, b.shape))

        return _make(data, (a, b), backward, "pairwise_distance")
    raise ValueError(f"unknown metric {metric!r}")
