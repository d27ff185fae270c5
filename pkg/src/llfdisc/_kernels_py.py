"""Pure-numpy versions of the compiled kernels (same signatures, same results)."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, oh, ow):
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : stride * (oh - 1) + 1 : stride, : stride * (ow - 1) + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


def col2im(cols, hp, wp, stride):
    B, C, kh, kw, oh, ow = cols.shape
    out = np.zeros((B, C, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += cols[:, :, i, j]
    return out


def _bin_index(x, bins):
    t = x * (bins - 1)
    k0 = np.floor(t)
    return k0, t - k0


def soft_hist(x, bins):
    P = x.shape[0]
    k0, frac = _bin_index(x, bins)
    offs = (np.arange(P) * bins)[:, None]
    parts = []
    for k, w in ((k0, 1.0 - frac), (k0 + 1, frac)):
        ok = (k >= 0) & (k <= bins - 1)
        idx = (k.astype(np.int64) + offs)[ok]
        parts.append(np.bincount(idx, weights=w[ok], minlength=P * bins))
    total = parts[0] + parts[1]
    return total.reshape(P, bins)


def soft_hist_grad(x, grad, bins):
    k0, _ = _bin_index(x, bins)
    rows = np.arange(x.shape[0])[:, None]

    def pick(k):
        ok = (k >= 0) & (k <= bins - 1)
        kk = np.where(ok, k, 0).astype(np.int64)
        return np.where(ok, grad[rows, kk], 0.0)

    return (bins - 1) * (pick(k0 + 1) - pick(k0))


def soft_hist_gather(x, table, bins):
    k0, frac = _bin_index(x, bins)
    rows = np.arange(x.shape[0])[:, None]

    def pick(k):
        ok = (k >= 0) & (k <= bins - 1)
        kk = np.where(ok, k, 0).astype(np.int64)
        return np.where(ok, table[rows, kk], 0.0)

    return (1.0 - frac) * pick(k0) + frac * pick(k0 + 1)
