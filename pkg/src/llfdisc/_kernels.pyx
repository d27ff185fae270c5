# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled gather/scatter kernels behind convolution and soft binning.

Accumulation order matches ``_kernels_py`` exactly so both backends give
bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

# A pure copy: numpy's strided copy is already memory bound and beat a compiled loop.
from ._kernels_py import im2col  # noqa: F401


def col2im(const double[:, :, :, :, :, ::1] cols, int hp, int wp, int stride):
    cdef Py_ssize_t B = cols.shape[0], C = cols.shape[1]
    cdef Py_ssize_t kh = cols.shape[2], kw = cols.shape[3]
    cdef Py_ssize_t oh = cols.shape[4], ow = cols.shape[5]
    out = np.zeros((B, C, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t b, c, i, j, r, s
    for b in range(B):
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for r in range(oh):
                        for s in range(ow):
                            o[b, c, i + stride * r, j + stride * s] += cols[b, c, i, j, r, s]
    return out


def soft_hist(const double[:, ::1] x, int bins):
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1]
    lower = np.zeros((P, bins), dtype=np.float64)
    upper = np.zeros((P, bins), dtype=np.float64)
    cdef double[:, ::1] lo = lower
    cdef double[:, ::1] up = upper
    cdef double scale = bins - 1
    cdef double t, k0f, frac
    cdef Py_ssize_t p, n, k0
    for p in range(P):
        for n in range(N):
            t = x[p, n] * scale
            k0f = floor(t)
            frac = t - k0f
            if k0f >= 0 and k0f <= bins - 1:
                k0 = <Py_ssize_t>k0f
                lo[p, k0] += 1.0 - frac
    for p in range(P):
        for n in range(N):
            t = x[p, n] * scale
            k0f = floor(t)
            frac = t - k0f
            if k0f + 1 >= 0 and k0f + 1 <= bins - 1:
                k0 = <Py_ssize_t>(k0f + 1)
                up[p, k0] += frac
    return lower + upper


def soft_hist_grad(const double[:, ::1] x, const double[:, ::1] grad, int bins):
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1]
    out = np.empty((P, N), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double scale = bins - 1
    cdef double t, k0f, gl, gu
    cdef Py_ssize_t p, n
    for p in range(P):
        for n in range(N):
            t = x[p, n] * scale
            k0f = floor(t)
            gl = 0.0
            gu = 0.0
            if k0f >= 0 and k0f <= bins - 1:
                gl = grad[p, <Py_ssize_t>k0f]
            if k0f + 1 >= 0 and k0f + 1 <= bins - 1:
                gu = grad[p, <Py_ssize_t>(k0f + 1)]
            o[p, n] = scale * (gu - gl)
    return out


def soft_hist_gather(const double[:, ::1] x, const double[:, ::1] table, int bins):
    cdef Py_ssize_t P = x.shape[0], N = x.shape[1]
    out = np.empty((P, N), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double scale = bins - 1
    cdef double t, k0f, frac, tl, tu
    cdef Py_ssize_t p, n
    for p in range(P):
        for n in range(N):
            t = x[p, n] * scale
            k0f = floor(t)
            frac = t - k0f
            tl = 0.0
            tu = 0.0
            if k0f >= 0 and k0f <= bins - 1:
                tl = table[p, <Py_ssize_t>k0f]
            if k0f + 1 >= 0 and k0f + 1 <= bins - 1:
                tu = table[p, <Py_ssize_t>(k0f + 1)]
            o[p, n] = (1.0 - frac) * tl + frac * tu
    return out
