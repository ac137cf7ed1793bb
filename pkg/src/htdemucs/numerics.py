"""Small dense tensor engine with define-by-run reverse-mode differentiation.

Arrays are float32 unless the inputs are float64 (gradient oracles run the
same graph in double precision). Every op builds its backward closure only
when grad mode is on and some input requires grad.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, expit

from . import _kernels
from .errors import ContractError, DegenerateRowError, DimensionError

DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def Parameter(data, name=None):
    return Tensor(np.asarray(data, dtype=DTYPE), requires_grad=True, name=name)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DTYPE))


def _make(data, parents, backward_fn):
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def backward(loss, grad=None):
    """Populate ``.grad`` on every tensor reachable from ``loss`` that requires grad."""
    if grad is None:
        if loss.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    else:
        grad = np.asarray(grad, dtype=loss.dtype)
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")

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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    pending = {id(loss): grad}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            pending[key] = pg if key not in pending else pending[key] + pg


# --- elementwise -----------------------------------------------------------

def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def add(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    out = a.data + b.data
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    out = a.data - b.data
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    ad, bd = a.data, b.data
    out = ad * bd

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(out, (a, b), bw)


def div(a, b):
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / float(b))
    a = _lift(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(out, (a, b), bw)


def tabs(x):
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def sigmoid(x):
    y = expit(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    out = (xd * cdf).astype(xd.dtype)

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return ((g * (cdf + xd * pdf)).astype(xd.dtype),)

    return _make(out, (x,), bw)


def glu(x, axis=1):
    """Split ``axis`` in half; first half gated by sigmoid of the second."""
    n = x.shape[axis]
    if n % 2:
        raise DimensionError(f"glu needs an even size along axis {axis}, got {n}")
    a, b = np.split(x.data, 2, axis=axis)
    s = expit(b)
    out = a * s

    def bw(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)

    return _make(out, (x,), bw)


def activation(x, kind):
    if kind == "gelu":
        return gelu(x)
    if kind == "glu":
        return glu(x, axis=0 if x.ndim == 1 else 1)
    raise ValueError(f"unknown activation {kind!r}")


# --- shape ops ----------------------------------------------------------------

def reshape(x, shape):
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a, b):
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, tuple(axes))


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x, idx):
    src_shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros(src_shape, dtype=dtype)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), bw)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def pad(x, widths):
    """Zero padding; ``widths`` as for ``np.pad``."""
    widths = tuple(tuple(w) for w in widths)
    out = np.pad(x.data, widths)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, x.shape))
    return _make(out, (x,), lambda g: (g[sl],))


def tsum(x, axis=None, keepdims=False):
    src = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).astype(x.dtype),)

    return _make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# --- linear algebra -----------------------------------------------------------

def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(out, (a, b), bw)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last dim {weight.shape[1]}, got {x.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ wd
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ xd.reshape(-1, xd.shape[-1])
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _make(out, parents, bw)


# --- softmax / normalization -------------------------------------------------

def softmax(x, axis=-1, mask=None):
    """Max-stabilized softmax; masked-out entries are exactly 0.

    ``mask`` is a boolean keep-mask broadcastable to ``x``, or an object with
    a ``mask`` attribute (a sparsity pattern).
    """
    xd = x.data
    if mask is not None:
        keep = np.asarray(getattr(mask, "mask", mask), dtype=bool)
        keep = np.broadcast_to(keep, xd.shape)
        if not keep.any(axis=axis).all():
            raise DegenerateRowError("softmax row has no kept element")
        masked = np.where(keep, xd, -np.inf)
        m = masked.max(axis=axis, keepdims=True)
        e = np.where(keep, np.exp(masked - m), 0.0).astype(xd.dtype)
    else:
        m = xd.max(axis=axis, keepdims=True)
        e = np.exp(xd - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), bw)


def normalize(x, axes, eps=1e-5):
    """Zero mean / unit variance over ``axes`` (no affine)."""
    axes = tuple(a % x.ndim for a in axes)
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).astype(xd.dtype)

    def bw(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return ((rstd * (g - gm - xhat * gxm)).astype(xd.dtype),)

    return _make(xhat, (x,), bw)


def layer_norm(x, axes, gamma=None, beta=None, eps=1e-5):
    """Normalize over ``axes`` then apply a trailing-axis affine transform."""
    y = normalize(x, axes, eps)
    if gamma is not None:
        y = mul(y, gamma)
    if beta is not None:
        y = add(y, beta)
    return y


# --- convolution ------------------------------------------------------------

def _batched(x):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected [C, T] or [B, C, T], got {x.shape}")
    return x, False


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation; ``x`` is [C_in, T] or [B, C_in, T], ``weight`` [C_out, C_in, K]."""
    x, squeeze = _batched(x)
    cout, cin, k = weight.shape
    b, c, t = x.shape
    if c != cin:
        raise DimensionError(f"conv1d expects {cin} input channels, got {c}")
    if k < 1 or stride < 1:
        raise DimensionError("kernel and stride must be >= 1")
    tp = t + 2 * padding
    if tp < k:
        raise DimensionError(f"conv1d output length < 1 (T={t}, padding={padding}, K={k})")
    t_out = (tp - k) // stride + 1
    xd, wd = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :t_out]
    # im2col as one contiguous [B*T', C_in*K] matrix, kept for backward
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * t_out, cin * k)
    w2 = wd.reshape(cout, cin * k)
    out = (cols @ w2.T).reshape(b, t_out, cout).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[:, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(b * t_out, cout)
        gw = (g2.T @ cols).reshape(cout, cin, k)
        gcols = (g2 @ w2).reshape(b, t_out, cin, k)
        gxp = _kernels.col2im(gcols, stride, tp)
        gx = gxp[:, :, padding:padding + t] if padding else gxp
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    y = _make(out, parents, bw)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Adjoint geometry of ``conv1d``; ``weight`` is [C_in, C_out, K].

    Output length is ``(T - 1) * stride - 2 * padding + K``.
    """
    x, squeeze = _batched(x)
    cin, cout, k = weight.shape
    b, c, t = x.shape
    if c != cin:
        raise DimensionError(f"conv_transpose1d expects {cin} input channels, got {c}")
    full = (t - 1) * stride + k
    t_out = full - 2 * padding
    if t_out < 1:
        raise DimensionError("conv_transpose1d output length < 1")
    xd, wd = x.data, weight.data
    x2 = np.ascontiguousarray(xd.transpose(0, 2, 1)).reshape(b * t, cin)
    w2 = wd.reshape(cin, cout * k)
    cols = (x2 @ w2).reshape(b, t, cout, k)
    out = _kernels.col2im(cols, stride, full)[:, :, padding:padding + t_out]
    if bias is not None:
        out = out + bias.data[:, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, full - t_out - padding))) if padding else g
        win = sliding_window_view(gfull, k, axis=2)[:, :, ::stride][:, :, :t]
        gcols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * t, cout * k)
        gx = (gcols @ w2.T).reshape(b, t, cin).transpose(0, 2, 1)
        gw = (x2.T @ gcols).reshape(cin, cout, k)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    y = _make(out, parents, bw)
    return reshape(y, y.shape[1:]) if squeeze else y
