"""Layer primitives (forward + hand-derived backward) for 1D segmentation nets.

Activations are C-contiguous numpy arrays laid out as (batch, length,
channels); element (b, t, c) therefore sits at flat index b*L*C + t*C + c.
Production runs use float32, verification runs float64. Every forward returns
``(out, cache)`` and the matching backward consumes ``(dout, cache)``; all ops
are pure apart from batch norm's in-place running-statistics update.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv1d_forward(x, w, b):
    """Same-padded, stride-1 1D convolution (cross-correlation convention).

    x: (B, L, Cin);  w: (K, Cin, F) with K odd;  b: (F,).
    Zero padding of (K-1)/2 on each side keeps the output length equal to L.
    """
    K, cin, _ = w.shape
    if K % 2 == 0:
        raise DataError(f"kernel size must be odd, got {K}")
    if x.ndim != 3 or x.shape[2] != cin:
        raise DataError(f"input shape {x.shape} incompatible with kernel Cin={cin}")
    B, L, _ = x.shape
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    out = np.zeros((B, L, w.shape[2]), dtype=x.dtype)
    for k in range(K):
        out += xp[:, k : k + L, :] @ w[k]
    out += b
    return out, (x, w)


def conv1d_backward(dout, cache):
    """Analytic adjoint of conv1d_forward. Returns (dx, dw, db)."""
    x, w = cache
    K = w.shape[0]
    B, L, _ = x.shape
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for k in range(K):
        dxp[:, k : k + L, :] += dout @ w[k].T
        dw[k] = np.tensordot(xp[:, k : k + L, :], dout, axes=([0, 1], [0, 1]))
    db = dout.sum(axis=(0, 1))
    dx = dxp[:, pad : pad + L, :] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, *,
                      momentum=0.9, eps=1e-5, train=True):
    """Per-channel batch normalization over the (batch, length) axes.

    Train mode normalizes with batch statistics and updates the running
    statistics in place: r = momentum*r + (1-momentum)*batch. Infer mode uses
    the running statistics only; before any training step those are the
    initial (mean 0, var 1), which is documented behavior, not an error.
    """
    if train:
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        ivar = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu) * ivar
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        ivar = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean) * ivar
    out = gamma * xhat + beta
    return out, (xhat, gamma, ivar, train)


def batchnorm_backward(dout, cache):
    """Returns (dx, dgamma, dbeta)."""
    xhat, gamma, ivar, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    if not train:
        return dout * (gamma * ivar), dgamma, dbeta
    n = dout.shape[0] * dout.shape[1]
    dxhat = dout * gamma
    dx = (ivar / n) * (
        n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1))
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# pointwise activations
# ---------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, cache):
    return dout * cache


def sigmoid_forward(x):
    # max-subtraction style stabilization: evaluate exp only on negative args
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out, out


def sigmoid_backward(dout, cache):
    s = cache
    return dout * s * (1.0 - s)


def softmax_forward(x):
    """Softmax across the channel axis, per (batch, time) position."""
    z = x - x.max(axis=2, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=2, keepdims=True)
    return out, out


def softmax_backward(dout, cache):
    s = cache
    return s * (dout - (dout * s).sum(axis=2, keepdims=True))


# ---------------------------------------------------------------------------
# pooling / resolution changes
# ---------------------------------------------------------------------------

def maxpool1d_forward(x, pool):
    """Non-overlapping max pooling along the length axis.

    Requires L divisible by pool. Returns the pooled tensor plus the argmax
    cache; ties resolve to the first index so backward is deterministic.
    """
    B, L, C = x.shape
    if pool < 1 or L % pool != 0:
        raise DataError(f"length {L} not divisible by pool size {pool}")
    xr = x.reshape(B, L // pool, pool, C)
    idx = xr.argmax(axis=2)
    out = np.take_along_axis(xr, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return np.ascontiguousarray(out), (idx, x.shape, pool)


def maxpool1d_backward(dout, cache):
    """Scatter the gradient to the argmax position of each window."""
    idx, shape, pool = cache
    B, L, C = shape
    dxr = np.zeros((B, L // pool, pool, C), dtype=dout.dtype)
    np.put_along_axis(dxr, idx[:, :, None, :], dout[:, :, None, :], axis=2)
    return dxr.reshape(B, L, C)


def upsample1d_forward(x, rate):
    """Nearest-neighbor upsampling: output[t] = input[t // rate]."""
    if rate < 1:
        raise DataError(f"upsample rate must be >= 1, got {rate}")
    return np.repeat(x, rate, axis=1), rate


def upsample1d_backward(dout, cache):
    """Sum gradients over each repeat group."""
    rate = cache
    B, Lr, C = dout.shape
    return dout.reshape(B, Lr // rate, rate, C).sum(axis=2)


# ---------------------------------------------------------------------------
# channel concatenation
# ---------------------------------------------------------------------------

def concat_forward(a, b):
    """Concatenate along channels; a-channels first (fixed order)."""
    if a.shape[0] != b.shape[0] or a.shape[1] != b.shape[1]:
        raise DataError(f"cannot concat shapes {a.shape} and {b.shape}")
    return np.concatenate((a, b), axis=2), a.shape[2]


def concat_backward(dout, cache):
    ca = cache
    return np.ascontiguousarray(dout[:, :, :ca]), np.ascontiguousarray(dout[:, :, ca:])


def concat_many_forward(parts):
    """Concatenate a list of (B, L, Ci) tensors along channels."""
    first = parts[0]
    for p in parts[1:]:
        if p.shape[0] != first.shape[0] or p.shape[1] != first.shape[1]:
            raise DataError(f"cannot concat shapes {first.shape} and {p.shape}")
    widths = [p.shape[2] for p in parts]
    return np.concatenate(parts, axis=2), widths


def concat_many_backward(dout, cache):
    widths = cache
    splits = np.cumsum(widths)[:-1]
    return [np.ascontiguousarray(p) for p in np.split(dout, splits, axis=2)]
