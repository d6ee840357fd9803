"""A small reverse-mode differentiation engine over float64 numpy arrays.

Every operation on :class:`Tensor` records its parents and a function that
maps the output gradient to parent gradients. :func:`backward` walks the
recorded graph in reverse topological order and accumulates ``.grad`` on
the leaves created with ``requires_grad=True``.
"""
import contextlib

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


_monitor = None


@contextlib.contextmanager
def track_conditioning():
    """Record how close the computation inside the block is to non-smooth points.

    Yields a dict with the smallest ``|input|`` of every ReLU call under
    ``"relu"`` and the smallest row RMS of every RMS normalization under
    ``"rms"``. Gradient checks use it to avoid test points next to a kink
    or a near-singular normalization.
    """
    global _monitor
    prev = _monitor
    _monitor = {"relu": [], "rms": []}
    try:
        yield _monitor
    finally:
        _monitor = prev


class Tensor:
    """Dense float64 array that can take part in a differentiation graph.

    ``shape`` and ``data`` mirror the wrapped numpy array; ``grad`` is filled
    by :func:`backward` for leaves with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return len(self.data)

    # arithmetic
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # reductions and views
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(a.data ** exponent, (a,), bw)


def relu(a):
    a = as_tensor(a)
    if _monitor is not None and a.size:
        _monitor["relu"].append(float(np.abs(a.data).min()))
    # Subgradient at 0 is 0.
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), bw)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _make(out, (a,), bw)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bw)


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is constant."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return _make(np.where(cond, a.data, b.data), (a, b), bw)


# --- linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError("matmul operands must have at least one axis")
    ad = a.data[None, :] if a.ndim == 1 else a.data
    bd = b.data[:, None] if b.ndim == 1 else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(
            f"matmul dimension mismatch on contracted axis: "
            f"{a.shape} @ {b.shape} ({ad.shape[-1]} != {bd.shape[-2]})")
    out = ad @ bd

    def bw(g):
        if a.ndim == 1:
            g = np.expand_dims(g, -2)
        if b.ndim == 1:
            g = np.expand_dims(g, -1)
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        ga = _unbroadcast(ga, ad.shape).reshape(a.shape)
        gb = _unbroadcast(gb, bd.shape).reshape(b.shape)
        return ga, gb

    shape = out.shape
    if a.ndim == 1:
        shape = shape[:-2] + shape[-1:]
    if b.ndim == 1:
        shape = shape[:-1]
    return _make(out.reshape(shape), (a, b), bw)


# --- reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


# --- shape manipulation --------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)

    def bw(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _make(np.swapaxes(a.data, ax1, ax2), (a,), bw)


def getitem(a, index):
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in parts)

    def bw(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), bw)


def concatenate(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw)


def fit_width(a, width):
    """Fixed (non-learned) projection of the last axis to ``width``.

    Truncates when narrowing, zero-pads when widening, identity otherwise.
    """
    a = as_tensor(a)
    d = a.shape[-1]
    if d == width:
        return a
    if width < d:
        return getitem(a, (Ellipsis, slice(0, width)))
    pad = np.zeros(a.shape[:-1] + (width - d,))
    return concatenate([a, Tensor(pad)], axis=-1)


# --- fused kernels -------------------------------------------------------------

def segment_softmax_pool(scores, values, offsets, return_weights=False):
    """Per-segment, per-column softmax of ``scores`` weighting ``values``.

    ``scores`` and ``values`` are ``[n, d]``; rows are grouped into
    consecutive segments by ``offsets`` (length ``S + 1``). Returns ``[S, d]``
    with zero rows for empty segments.
    """
    scores, values = as_tensor(scores), as_tensor(values)
    if scores.shape != values.shape or scores.ndim != 2:
        raise ValueError(
            f"scores and values must be matching [n, d] arrays, got {scores.shape} and {values.shape}")
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    if offsets[-1] != scores.shape[0]:
        raise ValueError(f"offsets end at {offsets[-1]} but there are {scores.shape[0]} rows")
    sd = np.ascontiguousarray(scores.data)
    vd = np.ascontiguousarray(values.data)
    pooled, weights = kernels.segment_pool_fwd(sd, vd, offsets)

    def bw(g):
        return kernels.segment_pool_bwd(np.ascontiguousarray(g), weights, vd, pooled, offsets)

    out = _make(pooled, (scores, values), bw)
    if return_weights:
        return out, weights
    return out


def rms_norm(x, gain, eps):
    """RMS-normalize ``x`` over its last axis and scale by ``gain``."""
    x, gain = as_tensor(x), as_tensor(gain)
    d = x.shape[-1]
    if gain.shape != (d,):
        raise ValueError(f"gain has shape {gain.shape}, expected ({d},) for axis -1 of {x.shape}")
    flat = np.ascontiguousarray(x.data.reshape(-1, d))
    out, inv_rms = kernels.rms_norm_fwd(flat, np.ascontiguousarray(gain.data), float(eps))
    if _monitor is not None and inv_rms.size:
        _monitor["rms"].append(float(1.0 / inv_rms.max()))

    def bw(g):
        gx, gg = kernels.rms_norm_bwd(
            np.ascontiguousarray(g.reshape(-1, d)), flat, gain.data, inv_rms)
        return gx.reshape(x.shape), gg

    return _make(out.reshape(x.shape), (x, gain), bw)


# --- backward pass -------------------------------------------------------------

def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-tracked leaf.

    Leaves that ``loss`` does not depend on are left untouched; callers that
    need explicit zeros should reset gradients first (``Module.zero_grad``).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward() expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = []
    seen = set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
