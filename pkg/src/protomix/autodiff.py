"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation records its inputs and a backward closure on the produced
tensor; ``backward(loss)`` walks the graph in reverse topological order and
accumulates gradients into ``Tensor.grad``. Graph recording is skipped when
no input requires a gradient or inside a ``no_grad()`` block, so the same
forward code serves training and inference.

All values are kept in double precision; reductions use numpy's fixed
left-to-right order, so results are bit-reproducible for identical inputs.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import NumericError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A float64 array with an optional gradient buffer and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic operators accept tensors, arrays, and scalars so that
    # formula-level code can run unchanged on plain numpy inputs.
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, backward):
    """Build an op result, recording the graph only when it can matter."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t, g):
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(out):
    """Backpropagate from a scalar tensor, accumulating into ``.grad``."""
    if out.data.size != 1:
        raise ShapeError(f"backward requires a scalar, got shape {out.data.shape}")
    order = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and broadcasting ops


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), bwd)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    data = np.where(mask, x.data, 0.0)

    def bwd(g):
        _accumulate(x, g * mask)

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    """Matrix product with optional leading batch dimensions.

    Backward accumulates dA = dC @ B^T and dB = A^T @ dC, with broadcast
    batch axes summed out.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))

    return _make(data, (a, b), bwd)


def transpose_last(x):
    x = as_tensor(x)
    data = x.data.swapaxes(-1, -2)

    def bwd(g):
        _accumulate(x, g.swapaxes(-1, -2))

    return _make(data, (x,), bwd)


def pairwise_sqdist(x, p):
    """Squared Euclidean distances between rows of x (n, d) and p (c, d)."""
    x, p = as_tensor(x), as_tensor(p)
    if x.data.ndim != 2 or p.data.ndim != 2 or x.data.shape[1] != p.data.shape[1]:
        raise ShapeError(f"pairwise_sqdist expects (n,d) and (c,d), got {x.data.shape} and {p.data.shape}")
    diff = x.data[:, None, :] - p.data[None, :, :]
    data = np.sum(diff * diff, axis=-1)

    def bwd(g):
        weighted = 2.0 * g[:, :, None] * diff
        if x.requires_grad:
            _accumulate(x, weighted.sum(axis=1))
        if p.requires_grad:
            _accumulate(p, -weighted.sum(axis=0))

    return _make(data, (x, p), bwd)


# ---------------------------------------------------------------------------
# normalization and softmax


def softmax_rows(x, scale=1.0):
    """Row-wise softmax of x / scale over the last axis, max-stabilized."""
    if not scale > 0:
        raise ShapeError(f"softmax scale must be positive, got {scale}")
    x = as_tensor(x)
    z = x.data / scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(x, data * (g - inner) / scale)

    return _make(data, (x,), bwd)


def log_softmax_rows(x):
    """Row-wise log-softmax over the last axis via stabilized log-sum-exp."""
    x = as_tensor(x)
    m = x.data.max(axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    probs = np.exp(data)

    def bwd(g):
        _accumulate(x, g - probs * g.sum(axis=-1, keepdims=True))

    return _make(data, (x,), bwd)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance; then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    data = y * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            _accumulate(gain, _unbroadcast(g * y, gain.data.shape))
        if bias.requires_grad:
            _accumulate(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            gy = g * gain.data
            _accumulate(
                x,
                inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True)),
            )

    return _make(data, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)

    def bwd(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _make(data, (x,), bwd)


def broadcast_to(x, shape):
    x = as_tensor(x)
    data = np.broadcast_to(x.data, shape)

    def bwd(g):
        _accumulate(x, _unbroadcast(g, x.data.shape))

    return _make(data.copy(), (x,), bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + size)
            if t.requires_grad:
                _accumulate(t, g[tuple(index)])
            start += size

    return _make(data, tuple(tensors), bwd)


def getitem(x, index):
    x = as_tensor(x)
    data = x.data[index]

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        _accumulate(x, full)

    return _make(data.copy() if isinstance(data, np.ndarray) else data, (x,), bwd)


def tensor_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape).copy())

    return _make(data, (x,), bwd)


def tensor_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.shape[axis]

    def bwd(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g / count, x.data.shape).copy())

    return _make(data, (x,), bwd)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f, params, epsilon=1e-4, max_coords_per_tensor=16, rng=None):
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` maps the parameter dict to a scalar Tensor and must be a pure
    function of the parameter values. A sample of coordinates per tensor is
    perturbed by +-epsilon; returns the maximum relative error
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|) over the sample.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.zero_grad()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise NumericError("grad_check: loss is not finite")
    backward(out)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    def eval_loss():
        with no_grad():
            value = f(params).data
        if not np.isfinite(value).all():
            raise NumericError("grad_check: perturbed loss is not finite")
        return float(value)

    max_err = 0.0
    for name, p in params.items():
        size = p.data.size
        if size <= max_coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_tensor, replace=False)
        for c in coords:
            original = p.data.flat[c]
            p.data.flat[c] = original + epsilon
            f_plus = eval_loss()
            p.data.flat[c] = original - epsilon
            f_minus = eval_loss()
            p.data.flat[c] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = analytic[name].flat[c]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
