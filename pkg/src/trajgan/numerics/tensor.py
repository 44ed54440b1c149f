"""Dense double-precision tensors with tape-based reverse-mode differentiation.

Operations are free functions. When a :class:`Tape` is active (``with tape:``)
every operation appends a node holding its inputs and a closure that maps the
output gradient to input gradients; :func:`backward` replays the tape in
reverse. Without an active tape operations are plain forward computations.
"""
from __future__ import annotations

import numpy as np

from .. import kernels


class NumericsError(Exception):
    """Base class for errors raised by tensor operations."""


class DimensionError(NumericsError, ValueError):
    pass


class DomainError(NumericsError, ValueError):
    pass


class NonFiniteError(NumericsError, FloatingPointError):
    pass


class UsageError(NumericsError, ValueError):
    pass


class Tensor:
    """An n-d array of float64 values. Row-major, like the underlying ndarray."""

    __slots__ = ("data", "name", "__weakref__")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel()

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={list(self.shape)})"

    def __len__(self):
        return self.data.shape[0]

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; nested tapes are allowed and the innermost one
    receives the records. A tape may be re-entered to extend it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.nodes)


_ACTIVE: list[Tape] = []


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, kind):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{kind} produced non-finite values")


def _emit(kind, out, inputs, grad_fn):
    _check_finite(out, kind)
    t = Tensor(out)
    if _ACTIVE:
        _ACTIVE[-1].nodes.append((t, inputs, grad_fn))
    return t


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(kind, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from exc


# -- binary elementwise -------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def matmul(a, b):
    """Matrix product of (..., n, k) and (k, m) operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def grad(g):
        ga = g @ bd.T
        a2 = ad.reshape(-1, ad.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _emit("matmul", ad @ bd, (a, b), grad)


def maximum(a, floor):
    """Elementwise max with a constant floor; gradient passes where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _emit("maximum", np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _emit("clip", np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# -- unary elementwise --------------------------------------------------------

def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    a = as_tensor(a)
    out = kernels._pykernels._sigmoid(a.data)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _emit("relu", a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _emit("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    ad = a.data
    return _emit("log", np.log(ad), (a,), lambda g: (g / ad,))


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", out, (a,), grad)


# -- reductions and shape ops -------------------------------------------------

def sum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape

    def grad(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis)), (a,), grad)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from exc
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def grad(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _emit("concat", out, tuple(ts), grad)


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack of zero tensors")
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from exc

    def grad(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _emit("stack", out, tuple(ts), grad)


def slice(a, start, stop):
    """Slice ``[start:stop]`` along the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    if not (0 <= start <= stop <= n):
        raise DimensionError(f"slice [{start}:{stop}] out of range for last axis {n}")
    shape = a.shape

    def grad(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _emit("slice", a.data[..., start:stop], (a,), grad)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {exc}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def take(a, idx):
    """Basic or advanced indexing ``a[idx]``; repeated indices accumulate."""
    a = as_tensor(a)
    shape = a.shape
    try:
        out = a.data[idx]
    except IndexError as exc:
        raise DimensionError(f"take: {exc}") from exc

    def grad(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("take", np.array(out, dtype=np.float64), (a,), grad)


def segment_sum(a, segments, n_segments):
    """Sum rows of ``a`` into ``n_segments`` buckets given per-row bucket ids."""
    a = as_tensor(a)
    seg = np.asarray(segments, dtype=np.intp)
    if seg.shape != a.shape[:1]:
        raise DimensionError("segment_sum: one segment id per row required")
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, seg, a.data)
    return _emit("segment_sum", out, (a,), lambda g: (g[seg],))


def segment_softmax(logits, segments, n_segments):
    """Softmax of a 1-d logit vector within each segment."""
    x = as_tensor(logits)
    seg = np.asarray(segments, dtype=np.intp)
    if x.data.ndim != 1 or seg.shape != x.shape:
        raise DimensionError("segment_softmax expects 1-d logits with matching segment ids")
    mx = np.full(n_segments, -np.inf)
    np.maximum.at(mx, seg, x.data)
    e = np.exp(x.data - mx[seg])
    tot = np.zeros(n_segments)
    np.add.at(tot, seg, e)
    out = e / tot[seg]

    def grad(g):
        dot = np.zeros(n_segments)
        np.add.at(dot, seg, g * out)
        return (out * (g - dot[seg]),)

    return _emit("segment_softmax", out, (x,), grad)


# -- fused kernels ------------------------------------------------------------

def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One LSTM step; returns a (A, 2H) tensor holding ``[h_new, c_new]``.

    Gate blocks in ``w_ih``/``w_hh``/``b`` are ordered input, forget, cell, output.
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hsz = c.shape[-1]
    if w_hh.shape != (hsz, 4 * hsz) or w_ih.shape != (x.shape[-1], 4 * hsz) or b.shape != (4 * hsz,):
        raise DimensionError("lstm_cell: weight shapes do not match state sizes")
    xd, hd = x.data, h.data
    wi, wh = w_ih.data, w_hh.data
    pre = xd @ wi + hd @ wh + b.data
    h_new, c_new, cache = kernels.lstm_pointwise_forward(pre, c.data)

    def grad(g):
        dpre, dc_prev = kernels.lstm_pointwise_backward(g[:, :hsz], g[:, hsz:], cache)
        return (dpre @ wi.T, dpre @ wh.T, dc_prev, xd.T @ dpre, hd.T @ dpre, dpre.sum(axis=0))

    return _emit("lstm_cell", np.concatenate([h_new, c_new], axis=1),
                 (x, h, c, w_ih, w_hh, b), grad)


def gmm_log_prob(pi, mux, muy, sx, sy, rho, points):
    """Log density of per-row bivariate mixtures; mixture tensors (..., K), points (..., 2)."""
    ts = [as_tensor(t) for t in (pi, mux, muy, sx, sy, rho)]
    pts = as_tensor(points)
    lead = ts[0].shape[:-1]
    k = ts[0].shape[-1]
    for t in ts:
        if t.shape != ts[0].shape:
            raise DimensionError("gmm_log_prob: mixture parameter shapes differ")
    if pts.shape != lead + (2,):
        raise DimensionError(f"gmm_log_prob: points shape {pts.shape} does not match {lead + (2,)}")
    flat = [t.data.reshape(-1, k) for t in ts]
    p2 = pts.data.reshape(-1, 2)
    px, py = p2[:, 0].copy(), p2[:, 1].copy()
    logp, cache = kernels.gmm_log_prob_forward(*flat, px, py)

    def grad(g):
        parts = kernels.gmm_log_prob_backward(g.reshape(-1), *flat, cache)
        grads = [p.reshape(lead + (k,)) for p in parts[:6]]
        gpts = np.stack([parts[6], parts[7]], axis=1).reshape(lead + (2,))
        return tuple(grads) + (gpts,)

    return _emit("gmm_log_prob", logp.reshape(lead), tuple(ts) + (pts,), grad)


# -- reverse pass -------------------------------------------------------------

def backward(tape, loss, wrt):
    """Gradients of scalar ``loss`` w.r.t. the tensors in ``wrt``.

    ``wrt`` may be a dict (name -> Tensor) or a sequence; the result has the
    same keys/order. Tensors the loss does not depend on get zero gradients.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, grad_fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, grad_fn(g)):
            if gi is None:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi

    def lookup(t):
        g = grads.get(id(t))
        return np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)

    if isinstance(wrt, dict):
        return {name: lookup(t) for name, t in wrt.items()}
    return [lookup(t) for t in wrt]
