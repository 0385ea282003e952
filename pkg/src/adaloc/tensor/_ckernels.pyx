# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``; identical signatures."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def softmax_fwd(real[:, ::1] x):
    # max shift and normalization in C; exp goes through numpy's SIMD loop,
    # which beats a scalar libm call per element
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] out = out_arr
    cdef real mx, s, inv
    cdef real* row
    cdef const real* src
    with nogil:
        for i in range(n):
            src = &x[i, 0]
            row = &out[i, 0]
            mx = src[0]
            for j in range(1, m):
                mx = src[j] if src[j] > mx else mx
            for j in range(m):
                row[j] = src[j] - mx
    np.exp(out_arr, out=out_arr)
    with nogil:
        for i in range(n):
            row = &out[i, 0]
            s = 0
            for j in range(m):
                s += row[j]
            inv = 1 / s
            for j in range(m):
                row[j] *= inv
    return out_arr


def softmax_bwd(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.asarray(y).dtype)
    cdef real[:, ::1] out = out_arr
    cdef real dot
    cdef const real* yr
    cdef const real* gr
    cdef real* row
    with nogil:
        for i in range(n):
            yr = &y[i, 0]
            gr = &gy[i, 0]
            row = &out[i, 0]
            dot = 0.0
            for j in range(m):
                dot += gr[j] * yr[j]
            for j in range(m):
                row[j] = <real>(yr[j] * (gr[j] - dot))
    return out_arr


def layernorm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    dt = np.asarray(x).dtype
    y_arr = np.empty((n, m), dtype=dt)
    xhat_arr = np.empty((n, m), dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef real[:, ::1] y = y_arr
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mu, var, r, d
    for i in range(n):
        mu = 0.0
        for j in range(m):
            mu += x[i, j]
        mu /= m
        var = 0.0
        for j in range(m):
            d = x[i, j] - mu
            var += d * d
        var /= m
        r = 1.0 / sqrt(var + eps)
        rstd[i] = <real>r
        for j in range(m):
            xhat[i, j] = <real>((x[i, j] - mu) * r)
            y[i, j] = xhat[i, j] * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(real[:, ::1] gy, real[:, ::1] xhat, real[::1] rstd, real[::1] gamma):
    cdef Py_ssize_t n = gy.shape[0], m = gy.shape[1], i, j
    dt = np.asarray(gy).dtype
    gx_arr = np.empty((n, m), dtype=dt)
    cdef real[:, ::1] gx = gx_arr
    cdef double[::1] gg = np.zeros(m, dtype=np.float64)
    cdef double[::1] gb = np.zeros(m, dtype=np.float64)
    cdef double mg, mgx, g
    for i in range(n):
        mg = 0.0
        mgx = 0.0
        for j in range(m):
            g = gy[i, j] * gamma[j]
            mg += g
            mgx += g * xhat[i, j]
            gg[j] += gy[i, j] * xhat[i, j]
            gb[j] += gy[i, j]
        mg /= m
        mgx /= m
        for j in range(m):
            g = gy[i, j] * gamma[j]
            gx[i, j] = <real>((g - mg - xhat[i, j] * mgx) * rstd[i])
    return gx_arr, np.asarray(gg).astype(dt), np.asarray(gb).astype(dt)


def maxpool_fwd(real[:, ::1] x, Py_ssize_t segment):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, s, j, k, best
    cdef Py_ssize_t nseg = (d + segment - 1) // segment
    out_arr = np.empty((n, nseg), dtype=np.asarray(x).dtype)
    idx_arr = np.empty((n, nseg), dtype=np.int64)
    cdef real[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    cdef double mx
    for i in range(n):
        for s in range(nseg):
            k = s * segment
            best = k
            mx = x[i, k]
            for j in range(k + 1, min(k + segment, d)):
                if x[i, j] > mx:
                    mx = x[i, j]
                    best = j
            out[i, s] = <real>mx
            idx[i, s] = best
    return out_arr, idx_arr


def maxpool_bwd(real[:, ::1] gout, cnp.int64_t[:, ::1] idx, Py_ssize_t d):
    cdef Py_ssize_t n = gout.shape[0], nseg = gout.shape[1], i, s
    gx_arr = np.zeros((n, d), dtype=np.asarray(gout).dtype)
    cdef real[:, ::1] gx = gx_arr
    for i in range(n):
        for s in range(nseg):
            gx[i, idx[i, s]] += gout[i, s]
    return gx_arr
