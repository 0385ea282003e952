"""Pure-numpy implementations of the hot kernels.

Every function takes and returns C-contiguous 2-D arrays (rows are
independent); callers reshape leading axes away.
"""
import numpy as np


def softmax_fwd(x):
    z = x - x.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_bwd(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def layernorm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def layernorm_bwd(gy, xhat, rstd, gamma):
    ggamma = (gy * xhat).sum(axis=0)
    gbeta = gy.sum(axis=0)
    g = gy * gamma
    gx = (g - g.mean(axis=1, keepdims=True)
          - xhat * (g * xhat).mean(axis=1, keepdims=True)) * rstd[:, None]
    return gx, ggamma, gbeta


def maxpool_fwd(x, segment):
    rows, d = x.shape
    pad = (-d) % segment
    if pad:
        x = np.concatenate([x, np.full((rows, pad), -np.inf, dtype=x.dtype)], axis=1)
    seg = x.reshape(rows, -1, segment)
    arg = seg.argmax(axis=2)
    out = np.take_along_axis(seg, arg[:, :, None], axis=2)[:, :, 0]
    idx = (arg + np.arange(seg.shape[1]) * segment).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_bwd(gout, idx, d):
    rows = gout.shape[0]
    gx = np.zeros((rows, d), dtype=gout.dtype)
    np.put_along_axis(gx, idx, gout, axis=1)
    return gx
