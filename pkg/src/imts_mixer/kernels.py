"""Hot numeric kernels with numba and pure-numpy implementations.

Two fused operations dominate the forward/backward cost of the model:

* segment softmax pooling: per segment of rows and per feature column, a
  softmax over the rows' scores followed by a weighted sum of their values.
  This is the aggregation step of ISCAM and, with scores repeated per head,
  of the multi-head attention encoder.
* row-wise RMS normalization with a learnable gain.

Segments are described by an ``offsets`` array of length ``S + 1``; rows
``offsets[s]:offsets[s + 1]`` belong to segment ``s``. Empty segments pool
to an all-zero row.

Each public kernel name is bound to the numba variant when acceleration is
enabled (see :mod:`imts_mixer._accel`) and to the numpy variant otherwise.
Both variants are importable directly as ``<name>_nb`` / ``<name>_np``.
"""
import numpy as np

from ._accel import USE_NUMBA, maybe_njit

BACKEND = "numba" if USE_NUMBA else "numpy"


# --- segment softmax pooling -------------------------------------------------

@maybe_njit
def segment_pool_fwd_nb(scores, values, offsets):
    n_seg = offsets.shape[0] - 1
    n, d = scores.shape
    pooled = np.zeros((n_seg, d))
    weights = np.empty((n, d))
    peak = np.empty(d)
    total = np.empty(d)
    # Rows outer, features inner: every pass walks memory contiguously.
    for s in range(n_seg):
        lo = offsets[s]
        hi = offsets[s + 1]
        if hi == lo:
            continue
        for j in range(d):
            peak[j] = scores[lo, j]
            total[j] = 0.0
        for i in range(lo + 1, hi):
            for j in range(d):
                if scores[i, j] > peak[j]:
                    peak[j] = scores[i, j]
        for i in range(lo, hi):
            for j in range(d):
                w = np.exp(scores[i, j] - peak[j])
                weights[i, j] = w
                total[j] += w
        for i in range(lo, hi):
            for j in range(d):
                w = weights[i, j] / total[j]
                weights[i, j] = w
                pooled[s, j] += w * values[i, j]
    return pooled, weights


@maybe_njit
def segment_pool_bwd_nb(grad_pooled, weights, values, pooled, offsets):
    n_seg = offsets.shape[0] - 1
    n, d = weights.shape
    grad_scores = np.zeros((n, d))
    grad_values = np.zeros((n, d))
    for s in range(n_seg):
        for i in range(offsets[s], offsets[s + 1]):
            for j in range(d):
                g = grad_pooled[s, j]
                w = weights[i, j]
                grad_values[i, j] = w * g
                grad_scores[i, j] = w * (values[i, j] - pooled[s, j]) * g
    return grad_scores, grad_values


def _segment_ids(offsets):
    lengths = np.diff(offsets)
    return np.repeat(np.arange(lengths.size), lengths), lengths


def segment_pool_fwd_np(scores, values, offsets):
    n_seg = offsets.shape[0] - 1
    n, d = scores.shape
    pooled = np.zeros((n_seg, d))
    if n == 0:
        return pooled, np.zeros((0, d))
    seg, lengths = _segment_ids(offsets)
    nonempty = lengths > 0
    # Consecutive nonempty starts delimit exactly the nonempty segments.
    starts = offsets[:-1][nonempty]
    peak = np.maximum.reduceat(scores, starts, axis=0)
    dense = np.cumsum(nonempty) - 1
    e = np.exp(scores - peak[dense[seg]])
    total = np.add.reduceat(e, starts, axis=0)
    weights = e / total[dense[seg]]
    pooled[nonempty] = np.add.reduceat(weights * values, starts, axis=0)
    return pooled, weights


def segment_pool_bwd_np(grad_pooled, weights, values, pooled, offsets):
    seg, _ = _segment_ids(offsets)
    g = grad_pooled[seg]
    return weights * (values - pooled[seg]) * g, weights * g


# --- RMS normalization -------------------------------------------------------

@maybe_njit
def rms_norm_fwd_nb(x, gain, eps):
    rows, d = x.shape
    out = np.empty((rows, d))
    inv_rms = np.empty(rows)
    for r in range(rows):
        sq = 0.0
        for j in range(d):
            sq += x[r, j] * x[r, j]
        inv = 1.0 / np.sqrt(sq / d + eps)
        inv_rms[r] = inv
        for j in range(d):
            out[r, j] = gain[j] * (x[r, j] * inv)
    return out, inv_rms


@maybe_njit
def rms_norm_bwd_nb(grad_out, x, gain, inv_rms):
    rows, d = x.shape
    grad_x = np.empty((rows, d))
    grad_gain = np.zeros(d)
    for r in range(rows):
        inv = inv_rms[r]
        dot = 0.0
        for j in range(d):
            xhat = x[r, j] * inv
            grad_gain[j] += grad_out[r, j] * xhat
            dot += grad_out[r, j] * gain[j] * xhat
        dot /= d
        for j in range(d):
            grad_x[r, j] = inv * (grad_out[r, j] * gain[j] - x[r, j] * inv * dot)
    return grad_x, grad_gain


def rms_norm_fwd_np(x, gain, eps):
    inv_rms = 1.0 / np.sqrt(np.mean(x * x, axis=1) + eps)
    return gain * (x * inv_rms[:, None]), inv_rms


def rms_norm_bwd_np(grad_out, x, gain, inv_rms):
    xhat = x * inv_rms[:, None]
    grad_gain = np.sum(grad_out * xhat, axis=0)
    gx = grad_out * gain
    dot = np.mean(gx * xhat, axis=1)
    return inv_rms[:, None] * (gx - xhat * dot[:, None]), grad_gain


if USE_NUMBA:
    segment_pool_fwd = segment_pool_fwd_nb
    segment_pool_bwd = segment_pool_bwd_nb
    rms_norm_fwd = rms_norm_fwd_nb
    rms_norm_bwd = rms_norm_bwd_nb
else:
    segment_pool_fwd = segment_pool_fwd_np
    segment_pool_bwd = segment_pool_bwd_np
    rms_norm_fwd = rms_norm_fwd_np
    rms_norm_bwd = rms_norm_bwd_np
