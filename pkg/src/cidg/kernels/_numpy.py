"""Vectorized numpy implementations of the hot kernels.

Reductions accumulate in float64 regardless of the storage dtype, matching the
compiled core so the two backends stay numerically close. Masked softmax zeroes
masked entries exactly (not via a large negative bias), which is what makes
appending PAD tokens bit-invariant.
"""

from __future__ import annotations

import numpy as np


def layer_norm_fwd(x, gain, offset, eps):
    mean = np.mean(x, axis=1, dtype=np.float64)
    var = np.mean(np.square(x, dtype=np.float64), axis=1, dtype=np.float64) - mean * mean
    rstd = 1.0 / np.sqrt(var + eps)
    mean = mean.astype(x.dtype)
    rstd = rstd.astype(x.dtype)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gain + offset
    return y.astype(x.dtype, copy=False), mean, rstd


def layer_norm_bwd(dy, x, gain, mean, rstd):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgain = np.sum(dy * xhat, axis=0, dtype=np.float64).astype(x.dtype)
    doffset = np.sum(dy, axis=0, dtype=np.float64).astype(x.dtype)
    dxhat = dy * gain
    m1 = np.mean(dxhat, axis=1, dtype=np.float64).astype(x.dtype)
    m2 = np.mean(dxhat * xhat, axis=1, dtype=np.float64).astype(x.dtype)
    dx = rstd[:, None] * (dxhat - m1[:, None] - xhat * m2[:, None])
    return dx.astype(x.dtype, copy=False), dgain, doffset


def masked_softmax_fwd(scores, mask):
    neg = np.finfo(scores.dtype).min
    m = np.max(np.where(mask, scores, neg), axis=1, keepdims=True)
    z = np.where(mask, scores - m, -np.inf)
    e = np.exp(z, dtype=np.float64)
    s = np.sum(e, axis=1, keepdims=True)
    np.divide(e, np.where(s > 0, s, 1.0), out=e)
    return e.astype(scores.dtype)


def softmax_bwd(dy, probs):
    inner = np.sum(dy * probs, axis=1, keepdims=True, dtype=np.float64).astype(probs.dtype)
    return probs * (dy - inner)


def relu_fwd(x):
    return np.maximum(x, 0)


def relu_bwd(dy, x):
    return dy * (x > 0)


def cross_entropy_fwd_bwd(logits, targets, pad_id):
    """Per-row NLL and dNLL/dlogits (softmax minus one-hot); PAD rows contribute zero."""
    rows = np.arange(logits.shape[0])
    valid = targets != pad_id
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m, dtype=np.float64)
    s = np.sum(e, axis=1, keepdims=True)
    lse = (np.log(s) + m).squeeze(1).astype(logits.dtype)
    safe_targets = np.where(valid, targets, 0)
    loss = np.where(valid, lse - logits[rows, safe_targets], logits.dtype.type(0))
    dlogits = (e / s).astype(logits.dtype)
    dlogits[rows[valid], targets[valid]] -= 1.0
    dlogits[~valid] = 0.0
    return loss, dlogits


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, step):
    """In-place decoupled-decay Adam step on flat float32/float64 views."""
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * np.square(g)
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype, copy=False)
