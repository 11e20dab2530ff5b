"""Dense float arrays with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. Every operation applied to a tensor that
requires gradients records a backward closure on its result, forming an
implicit tape. ``Tensor.backward()`` (on a scalar) replays the tape in
reverse topological order and accumulates ``grad`` arrays on the leaves.
Gradients keep accumulating across calls until explicitly zeroed.

Heavy layer primitives (conv1d, layer_norm, batch_norm, gelu, softmax,
dmsa, dropout) are implemented as single fused tape nodes with hand-written
backward formulas; the finite-difference suite in tests verifies each one.
All math is done in the dtype of the inputs (float64 by default).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from ..errors import ConfigurationError, ContractViolation

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (pure-numpy forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64)
    return arr


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must hold exactly one element; raises ContractViolation
        otherwise.
        """
        if self.data.size != 1:
            raise ContractViolation(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                held = grads.get(id(parent))
                # never mutate a held array in place: it may alias another
                # node's output gradient
                grads[id(parent)] = pg if held is None else held + pg

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


class Parameter(Tensor):
    """A leaf tensor updated by an optimizer; gradient always allocated."""

    def __init__(self, data, name=None, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.grad = np.zeros_like(self.data)
        self.name = name


def _coerce(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward):
    """Create the result tensor, recording the tape edge when needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward
        return out
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------


def add(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(out, (a, b), backward)


def sub(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(out, (a, b), backward)


def mul(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _node(out, (a, b), backward)


def div(a, b):
    a = _coerce(a, getattr(b, "dtype", None))
    b = _coerce(b, a.dtype)
    out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _node(out, (a, b), backward)


def neg(a):
    def backward(g):
        return (-g,)

    return _node(-a.data, (a,), backward)


def power(a, p):
    p = float(p)
    out = a.data**p

    def backward(g):
        return (g * p * a.data ** (p - 1.0),)

    return _node(out, (a,), backward)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ConfigurationError("matmul requires tensors with ndim >= 2")
    if b.ndim == 2:
        out = a.data @ b.data

        def backward(g):
            da = g @ b.data.T
            k, n = b.data.shape
            db = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            return da, db

    else:
        if a.data.shape[:-2] != b.data.shape[:-2]:
            raise ConfigurationError(
                f"matmul batch dims differ: {a.data.shape} vs {b.data.shape}"
            )
        out = np.matmul(a.data, b.data)

        def backward(g):
            da = np.matmul(g, b.data.swapaxes(-1, -2))
            db = np.matmul(a.data.swapaxes(-1, -2), g)
            return da, db

    return _node(out, (a, b), backward)


# -- reductions / shape ---------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(out, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.data.shape).copy(),)

    return _node(out, (a,), backward)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.data.shape),)

    return _node(out, (a,), backward)


def swapaxes(a, ax1, ax2):
    out = a.data.swapaxes(ax1, ax2)

    def backward(g):
        return (g.swapaxes(ax1, ax2),)

    return _node(out, (a,), backward)


def take(a, key):
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _node(out, (a,), backward)


def concatenate(tensors, axis=0):
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, backward)


# -- nonlinearities -------------------------------------------------------


def gelu(a):
    """x * Phi(x) with Phi the standard normal CDF (erf form)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _node(out, (a,), backward)


def softmax(a, axis=-1):
    """Max-stabilized softmax; -inf entries get exactly zero weight."""
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), backward)


def dropout(a, p, training, rng=None):
    """Inverted dropout: scales kept units by 1/(1-p) so E[out] = in."""
    if not training or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        from .rng import get_rng

        rng = get_rng()
    mask = (rng.random(a.data.shape) >= p).astype(a.dtype)
    mask /= 1.0 - p
    out = a.data * mask

    def backward(g):
        return (g * mask,)

    return _node(out, (a,), backward)


# -- convolution ----------------------------------------------------------


def conv1d(x, weight, bias=None, dilation=1):
    """Same-length 1-D convolution, stride 1, symmetric zero padding.

    x: [c_in, n] or [batch, c_in, n]; weight: [c_out, c_in, k] with k odd;
    bias: [c_out] or None. Output keeps the time length n.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x3 = reshape(x, (1,) + x.data.shape)
    else:
        x3 = x
    if x3.ndim != 3 or weight.ndim != 3:
        raise ConfigurationError("conv1d expects x [b,c,n] and weight [o,c,k]")
    b, c, n = x3.data.shape
    o, cw, k = weight.data.shape
    if cw != c:
        raise ConfigurationError(f"conv1d channel mismatch: input {c}, kernel {cw}")
    if k % 2 != 1:
        raise ConfigurationError(f"conv1d kernel size must be odd, got {k}")
    if dilation < 1:
        raise ConfigurationError(f"conv1d dilation must be >= 1, got {dilation}")
    if bias is not None and bias.data.shape != (o,):
        raise ConfigurationError("conv1d bias shape must be [c_out]")

    pad = (k - 1) * dilation // 2
    span = (k - 1) * dilation + 1
    xp = np.zeros((b, c, n + 2 * pad), dtype=x3.dtype)
    xp[:, :, pad : pad + n] = x3.data
    # windows[b, c, n, k]; strided view, no copy until the reshape below
    windows = sliding_window_view(xp, span, axis=2)[..., ::dilation]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(b, n, c * k)
    w2 = weight.data.reshape(o, c * k)
    out = cols @ w2.T  # [b, n, o]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.swapaxes(1, 2))  # [b, o, n]

    def backward(g):
        gt = np.ascontiguousarray(g.swapaxes(1, 2))  # [b, n, o]
        g2 = gt.reshape(b * n, o)
        dw = (g2.T @ cols.reshape(b * n, c * k)).reshape(o, c, k)
        db = None if bias is None else g2.sum(axis=0)
        dcols = (g2 @ w2).reshape(b, n, c, k).transpose(0, 2, 1, 3)
        dxp = np.zeros_like(xp)
        for t in range(k):
            dxp[:, :, t * dilation : t * dilation + n] += dcols[:, :, :, t]
        dx = dxp[:, :, pad : pad + n]
        if bias is None:
            return dx, dw
        return dx, dw, db

    parents = (x3, weight) if bias is None else (x3, weight, bias)
    res = _node(out, parents, backward)
    if squeeze:
        return reshape(res, res.data.shape[1:])
    return res


# -- normalization --------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize over the last axis, then apply per-feature affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    reduce_axes = tuple(range(x.ndim - 1))

    def backward(g):
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """BatchNorm over [batch, channel, time]: stats per channel on (b, n).

    In training mode normalizes with batch statistics (population variance)
    and updates the running buffers in place; in eval mode uses the running
    statistics.
    """
    if x.ndim != 3:
        raise ConfigurationError(f"batch_norm expects [b,c,n], got {x.data.shape}")
    if training and x.data.shape[0] < 1:
        raise ConfigurationError("batch_norm train mode needs batch size >= 1")
    if training:
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def backward(g):
        dgamma = (g * xhat).sum(axis=(0, 2))
        dbeta = g.sum(axis=(0, 2))
        dxhat = g * gamma.data[None, :, None]
        if not training:
            dx = dxhat * inv[None, :, None]
            return dx, dgamma, dbeta
        count = x.data.shape[0] * x.data.shape[2]
        s1 = dxhat.sum(axis=(0, 2), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
        dx = inv[None, :, None] * (dxhat - s1 / count - xhat * (s2 / count))
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), backward)


# -- attention ------------------------------------------------------------


def _masked_scores(q, k):
    """Scaled dot-product scores with the diagonal forced to -inf."""
    length = q.shape[-2]
    if length < 2:
        raise ContractViolation(
            "diagonally masked attention needs sequence length >= 2"
        )
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = np.matmul(q, k.swapaxes(-1, -2))
    scores *= scale
    idx = np.arange(length)
    scores[..., idx, idx] = -np.inf
    return scores, scale


def _softmax_inplace(scores):
    m = scores.max(axis=-1, keepdims=True)
    np.subtract(scores, m, out=scores)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def attention_weights(q, k):
    """Diagonally masked attention matrix for plain numpy inputs."""
    scores, _ = _masked_scores(np.asarray(q), np.asarray(k))
    return _softmax_inplace(scores)


def dmsa(q, k, v, weights_out=None):
    """Diagonally masked scaled dot-product attention.

    q, k, v: [..., length, d_head] with matching leading dims. Self scores
    are masked to -inf before the softmax, so every position attends only
    to the others. ``weights_out``, when a list, receives the attention
    matrix as a numpy array (introspection hook for diagnostics/tests).
    """
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise ConfigurationError("dmsa expects q, k, v with identical shapes")
    scores, scale = _masked_scores(q.data, k.data)
    w = _softmax_inplace(scores)  # reuses the scores buffer
    if weights_out is not None:
        weights_out.append(w)
    out = np.matmul(w, v.data)

    def backward(g):
        dw = np.matmul(g, v.data.swapaxes(-1, -2))
        dv = np.matmul(w.swapaxes(-1, -2), g)
        dot = (dw * w).sum(axis=-1, keepdims=True)
        ds = w * (dw - dot)  # zero wherever w is zero, including the diagonal
        dq = np.matmul(ds, k.data)
        dq *= scale
        dk = np.matmul(ds.swapaxes(-1, -2), q.data)
        dk *= scale
        return dq, dk, dv

    return _node(out, (q, k, v), backward)
