"""Loop-heavy kernels with a numba path and a vectorized numpy path.

Each public kernel dispatches on :data:`kgae._accel.NUMBA_ENABLED`. Both
implementations are importable (``*_numpy`` / ``*_numba``) so tests and the
benchmark can compare them directly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import NUMBA_ENABLED, njit


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# -- im2col / col2im --------------------------------------------------------

def im2col_numpy(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, ho * wo, c * kh * kw)


def col2im_numpy(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    cols = cols.reshape(b, ho, wo, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w].copy()
    return dxp


@njit
def _im2col_loops(x, kh, kw, stride, pad, ho, wo):
    b, c, h, w = x.shape
    out = np.zeros((b, ho * wo, c * kh * kw))
    for n in range(b):
        for oy in range(ho):
            for ox in range(wo):
                row = oy * wo + ox
                col = 0
                for ch in range(c):
                    for i in range(kh):
                        y = oy * stride + i - pad
                        for j in range(kw):
                            xx = ox * stride + j - pad
                            if 0 <= y < h and 0 <= xx < w:
                                out[n, row, col] = x[n, ch, y, xx]
                            col += 1
    return out


@njit
def _col2im_loops(cols, b, c, h, w, kh, kw, stride, pad, ho, wo):
    dx = np.zeros((b, c, h, w))
    for i in range(kh):
        for j in range(kw):
            for n in range(b):
                for oy in range(ho):
                    y = oy * stride + i - pad
                    if y < 0 or y >= h:
                        continue
                    for ox in range(wo):
                        xx = ox * stride + j - pad
                        if xx < 0 or xx >= w:
                            continue
                        row = oy * wo + ox
                        for ch in range(c):
                            dx[n, ch, y, xx] += cols[n, row, (ch * kh + i) * kw + j]
    return dx


def im2col_numba(x, kh, kw, stride, pad):
    ho, wo = _out_size(x.shape[2], kh, stride, pad), _out_size(x.shape[3], kw, stride, pad)
    return _im2col_loops(np.ascontiguousarray(x, dtype=np.float64), kh, kw, stride, pad, ho, wo)


def col2im_numba(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    ho, wo = _out_size(h, kh, stride, pad), _out_size(w, kw, stride, pad)
    return _col2im_loops(np.ascontiguousarray(cols, dtype=np.float64), b, c, h, w, kh, kw, stride, pad, ho, wo)


# -- longest common subsequence ----------------------------------------------

def lcs_length_numpy(a, b):
    """LCS length of two int sequences; one vectorized DP row per element of ``a``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0
    prev = np.zeros(b.size + 1, dtype=np.int64)
    for tok in a:
        cand = prev.copy()
        cand[1:] = np.maximum(prev[1:], prev[:-1] + (b == tok))
        prev = np.maximum.accumulate(cand)
    return int(prev[-1])


@njit
def _lcs_loops(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(n):
        for j in range(1, m + 1):
            if a[i] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        for j in range(m + 1):
            prev[j] = cur[j]
    return prev[m]


def lcs_length_numba(a, b):
    return int(_lcs_loops(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))


# -- fused Adam update ------------------------------------------------------

def adam_update_numpy(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """In-place bias-corrected Adam update of ``p``, ``m`` and ``v``."""
    if weight_decay:
        g = g + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@njit
def _adam_loops(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    for i in range(p.size):
        gi = g[i]
        if weight_decay != 0.0:
            gi = gi + weight_decay * p[i]
        m[i] = m[i] * beta1 + (1.0 - beta1) * gi
        v[i] = v[i] * beta2 + (1.0 - beta2) * (gi * gi)
        p[i] -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)


def adam_update_numba(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    _adam_loops(p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1), m.reshape(-1), v.reshape(-1),
                float(lr), float(beta1), float(beta2), float(eps), float(weight_decay), float(bc1), float(bc2))


if NUMBA_ENABLED:
    im2col, col2im = im2col_numba, col2im_numba
    lcs_length = lcs_length_numba
    adam_update = adam_update_numba
else:
    im2col, col2im = im2col_numpy, col2im_numpy
    lcs_length = lcs_length_numpy
    adam_update = adam_update_numpy
