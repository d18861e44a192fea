# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; one-to-one with the numpy fallback module.

Loops accumulate in double regardless of the storage dtype, and masked
softmax writes exact zeros for masked entries, matching the fallback's
semantics so either backend can drive the same tests.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

ctypedef fused floating:
    float
    double


cdef inline object _empty(tuple shape, bint is_double):
    return np.empty(shape, dtype=np.float64 if is_double else np.float32)


def layer_norm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] offset, double eps):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, d
    cdef bint dbl = floating is double
    y_arr = _empty((R, D), dbl)
    mean_arr = _empty((R,), dbl)
    rstd_arr = _empty((R,), dbl)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef double acc, acc2, mu
    cdef floating mu_f, r_f, xhat
    for r in range(R):
        acc = 0.0
        acc2 = 0.0
        for d in range(D):
            acc += x[r, d]
            acc2 += <double> x[r, d] * <double> x[r, d]
        mu = acc / D
        mean[r] = <floating> mu
        rstd[r] = <floating> (1.0 / sqrt(acc2 / D - mu * mu + eps))
        mu_f = mean[r]
        r_f = rstd[r]
        for d in range(D):
            xhat = (x[r, d] - mu_f) * r_f
            y[r, d] = xhat * gain[d] + offset[d]
    return y_arr, mean_arr, rstd_arr


def layer_norm_bwd(
    floating[:, ::1] dy,
    floating[:, ::1] x,
    floating[::1] gain,
    floating[::1] mean,
    floating[::1] rstd,
):
    cdef Py_ssize_t R = x.shape[0], D = x.shape[1], r, d
    cdef bint dbl = floating is double
    dx_arr = _empty((R, D), dbl)
    dgain_arr = np.zeros(D, dtype=np.float64)
    doffset_arr = np.zeros(D, dtype=np.float64)
    cdef floating[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] doffset = doffset_arr
    cdef double a1, a2
    cdef floating xhat, dxhat, m1, m2, mu_f, r_f
    for r in range(R):
        mu_f = mean[r]
        r_f = rstd[r]
        a1 = 0.0
        a2 = 0.0
        for d in range(D):
            xhat = (x[r, d] - mu_f) * r_f
            dxhat = dy[r, d] * gain[d]
            dgain[d] += <double> dy[r, d] * <double> xhat
            doffset[d] += dy[r, d]
            a1 += dxhat
            a2 += <double> dxhat * <double> xhat
        m1 = <floating> (a1 / D)
        m2 = <floating> (a2 / D)
        for d in range(D):
            xhat = (x[r, d] - mu_f) * r_f
            dxhat = dy[r, d] * gain[d]
            dx[r, d] = r_f * (dxhat - m1 - xhat * m2)
    dtype = np.float64 if dbl else np.float32
    return dx_arr, dgain_arr.astype(dtype), doffset_arr.astype(dtype)


def masked_softmax_fwd(floating[:, ::1] scores, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t R = scores.shape[0], C = scores.shape[1], r, c
    cdef bint dbl = floating is double
    out_arr = _empty((R, C), dbl)
    cdef floating[:, ::1] out = out_arr
    cdef double m, s, e
    cdef bint any_valid
    for r in range(R):
        any_valid = False
        m = -1e300
        for c in range(C):
            if mask[r, c] and scores[r, c] > m:
                m = scores[r, c]
                any_valid = True
        if not any_valid:
            for c in range(C):
                out[r, c] = 0.0
            continue
        s = 0.0
        for c in range(C):
            if mask[r, c]:
                s += exp(scores[r, c] - m)
        for c in range(C):
            if mask[r, c]:
                e = exp(scores[r, c] - m)
                out[r, c] = <floating> (e / s)
            else:
                out[r, c] = 0.0
    return out_arr


def softmax_bwd(floating[:, ::1] dy, floating[:, ::1] probs):
    cdef Py_ssize_t R = dy.shape[0], C = dy.shape[1], r, c
    cdef bint dbl = floating is double
    out_arr = _empty((R, C), dbl)
    cdef floating[:, ::1] out = out_arr
    cdef double acc
    cdef floating inner
    for r in range(R):
        acc = 0.0
        for c in range(C):
            acc += <double> dy[r, c] * <double> probs[r, c]
        inner = <floating> acc
        for c in range(C):
            out[r, c] = probs[r, c] * (dy[r, c] - inner)
    return out_arr


def relu_fwd(floating[:, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2], b, t, d
    cdef bint dbl = floating is double
    out_arr = _empty((B, T, D), dbl)
    cdef floating[:, :, ::1] out = out_arr
    for b in range(B):
        for t in range(T):
            for d in range(D):
                out[b, t, d] = x[b, t, d] if x[b, t, d] > 0 else 0
    return out_arr


def relu_bwd(floating[:, :, ::1] dy, floating[:, :, ::1] x):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], D = x.shape[2], b, t, d
    cdef bint dbl = floating is double
    out_arr = _empty((B, T, D), dbl)
    cdef floating[:, :, ::1] out = out_arr
    for b in range(B):
        for t in range(T):
            for d in range(D):
                out[b, t, d] = dy[b, t, d] if x[b, t, d] > 0 else 0
    return out_arr


def cross_entropy_fwd_bwd(floating[:, ::1] logits, const cnp.int64_t[::1] targets, long pad_id):
    cdef Py_ssize_t R = logits.shape[0], V = logits.shape[1], r, c
    cdef bint dbl = floating is double
    loss_arr = _empty((R,), dbl)
    dlogits_arr = _empty((R, V), dbl)
    cdef floating[::1] loss = loss_arr
    cdef floating[:, ::1] dlogits = dlogits_arr
    cdef double m, s, lse
    cdef cnp.int64_t t
    for r in range(R):
        t = targets[r]
        if t == pad_id:
            loss[r] = 0.0
            for c in range(V):
                dlogits[r, c] = 0.0
            continue
        m = logits[r, 0]
        for c in range(1, V):
            if logits[r, c] > m:
                m = logits[r, c]
        s = 0.0
        for c in range(V):
            s += exp(logits[r, c] - m)
        lse = log(s) + m
        loss[r] = <floating> lse - logits[r, t]
        for c in range(V):
            dlogits[r, c] = <floating> (exp(logits[r, c] - m) / s)
        dlogits[r, t] -= 1.0
    return loss_arr, dlogits_arr


def adamw_update(
    floating[::1] p,
    floating[::1] g,
    floating[::1] m,
    floating[::1] v,
    double lr,
    double beta1,
    double beta2,
    double eps,
    double wd,
    long step,
):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double bc1 = 1.0 - beta1 ** step
    cdef double bc2 = 1.0 - beta2 ** step
    cdef double gi, mi, vi
    for i in range(n):
        if wd != 0.0:
            p[i] = <floating> (p[i] * (1.0 - lr * wd))
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = <floating> mi
        v[i] = <floating> vi
        p[i] -= <floating> (lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
