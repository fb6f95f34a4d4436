# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Mirrors ``pykern`` exactly: same functions, shapes, and conventions.
"""

import numpy as np

from libc.math cimport floor
from libc.stdint cimport int32_t, int64_t

NAME = "cython"

ctypedef fused floating:
    float
    double


cdef inline object _empty_like_dtype(floating[:, :, ::1] x, tuple shape):
    if floating is float:
        return np.empty(shape, dtype=np.float32)
    else:
        return np.empty(shape, dtype=np.float64)


def channel_min_arg(floating[:, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], n = x.shape[2]
    cdef Py_ssize_t i, j, k
    cdef floating best
    cdef Py_ssize_t besti
    out = _empty_like_dtype(x, (b, c))
    arg = np.empty((b, c), dtype=np.int64)
    cdef floating[:, ::1] ov = out
    cdef int64_t[:, ::1] av = arg
    for i in range(b):
        for j in range(c):
            best = x[i, j, 0]
            besti = 0
            for k in range(1, n):
                if x[i, j, k] < best:
                    best = x[i, j, k]
                    besti = k
            ov[i, j] = best
            av[i, j] = besti
    return out, arg


def channel_max_arg(floating[:, :, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], n = x.shape[2]
    cdef Py_ssize_t i, j, k
    cdef floating best
    cdef Py_ssize_t besti
    out = _empty_like_dtype(x, (b, c))
    arg = np.empty((b, c), dtype=np.int64)
    cdef floating[:, ::1] ov = out
    cdef int64_t[:, ::1] av = arg
    for i in range(b):
        for j in range(c):
            best = x[i, j, 0]
            besti = 0
            for k in range(1, n):
                if x[i, j, k] > best:
                    best = x[i, j, k]
                    besti = k
            ov[i, j] = best
            av[i, j] = besti
    return out, arg


def discretize_levels(floating[:, :, ::1] x, floating[:, ::1] mn,
                      floating[:, ::1] mx, int levels):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], n = x.shape[2]
    cdef Py_ssize_t i, j, k
    cdef floating lo, rng
    cdef double t
    cdef int idx, top = levels - 1
    out = np.empty((b, c, n), dtype=np.int32)
    cdef int32_t[:, :, ::1] ov = out
    for i in range(b):
        for j in range(c):
            lo = mn[i, j]
            rng = mx[i, j] - lo
            if rng > 0:
                for k in range(n):
                    t = floor((x[i, j, k] - lo) / rng * levels)
                    idx = <int> t
                    if idx < 0:
                        idx = 0
                    elif idx > top:
                        idx = top
                    ov[i, j, k] = idx
            else:
                for k in range(n):
                    ov[i, j, k] = 0
    return out


def gather_levels(floating[:, :, ::1] a, int32_t[:, :, ::1] lev):
    cdef Py_ssize_t b = a.shape[0], c = a.shape[2], n = lev.shape[2]
    cdef Py_ssize_t i, j, k
    out = _empty_like_dtype(a, (b, c, n))
    cdef floating[:, :, ::1] ov = out
    for i in range(b):
        for j in range(c):
            for k in range(n):
                ov[i, j, k] = a[i, lev[i, j, k], j]
    return out


def scatter_levels_add(floating[:, :, ::1] g, int32_t[:, :, ::1] lev, int levels):
    cdef Py_ssize_t b = g.shape[0], c = g.shape[1], n = g.shape[2]
    cdef Py_ssize_t i, j, k
    if floating is float:
        out = np.zeros((b, levels, c), dtype=np.float32)
    else:
        out = np.zeros((b, levels, c), dtype=np.float64)
    cdef floating[:, :, ::1] ov = out
    for i in range(b):
        for j in range(c):
            for k in range(n):
                ov[i, lev[i, j, k], j] += g[i, j, k]
    return out


cdef void _dw_accumulate(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
                         int d, int ph0, int pw0,
                         floating[:, :, :, ::1] out) noexcept:
    # out[y,u] += w[i,j] * x[y + i*d - ph0, u + j*d - pw0], zero outside x
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    cdef Py_ssize_t ib, ic, i, j, y, u, ylo, yhi, ulo, uhi
    cdef Py_ssize_t dy, dx
    cdef floating wij
    for ib in range(b):
        for ic in range(c):
            for i in range(kh):
                dy = i * d - ph0
                ylo = -dy if dy < 0 else 0
                yhi = h - dy if dy > 0 else h
                for j in range(kw):
                    dx = j * d - pw0
                    ulo = -dx if dx < 0 else 0
                    uhi = wd - dx if dx > 0 else wd
                    wij = w[ic, i, j]
                    if wij == 0:
                        continue
                    for y in range(ylo, yhi):
                        for u in range(ulo, uhi):
                            out[ib, ic, y, u] += wij * x[ib, ic, y + dy, u + dx]


def dwconv2d(floating[:, :, :, ::1] x, floating[:, :, ::1] w,
             int dilation, int ph0, int pw0):
    cdef tuple shape = (x.shape[0], x.shape[1], x.shape[2], x.shape[3])
    if floating is float:
        out = np.zeros(shape, dtype=np.float32)
    else:
        out = np.zeros(shape, dtype=np.float64)
    cdef floating[:, :, :, ::1] ov = out
    _dw_accumulate(x, w, dilation, ph0, pw0, ov)
    return out


def dwconv2d_grad_input(floating[:, :, :, ::1] gy, floating[:, :, ::1] w,
                        int dilation, int ph0, int pw0):
    # gx[q] = sum_ij w[i,j] * gy[q - i*d + ph0]: flipped kernel, mirrored pad
    cdef Py_ssize_t kh = w.shape[1], kw = w.shape[2]
    wf = np.ascontiguousarray(np.asarray(w)[:, ::-1, ::-1])
    cdef tuple shape = (gy.shape[0], gy.shape[1], gy.shape[2], gy.shape[3])
    if floating is float:
        out = np.zeros(shape, dtype=np.float32)
    else:
        out = np.zeros(shape, dtype=np.float64)
    cdef floating[:, :, :, ::1] ov = out
    cdef floating[:, :, ::1] wv = wf
    _dw_accumulate(gy, wv, dilation,
                   <int> ((kh - 1) * dilation - ph0),
                   <int> ((kw - 1) * dilation - pw0), ov)
    return out


def dwconv2d_grad_weight(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy,
                         int dilation, int kh, int kw, int ph0, int pw0):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ib, ic, i, j, y, u, ylo, yhi, ulo, uhi
    cdef Py_ssize_t dy, dx
    cdef double acc
    gw = np.empty((c, kh, kw), dtype=np.float64)
    cdef double[:, :, ::1] gv = gw
    for ic in range(c):
        for i in range(kh):
            dy = i * dilation - ph0
            ylo = -dy if dy < 0 else 0
            yhi = h - dy if dy > 0 else h
            for j in range(kw):
                dx = j * dilation - pw0
                ulo = -dx if dx < 0 else 0
                uhi = wd - dx if dx > 0 else wd
                acc = 0.0
                for ib in range(b):
                    for y in range(ylo, yhi):
                        for u in range(ulo, uhi):
                            acc += (<double> x[ib, ic, y + dy, u + dx]) * gy[ib, ic, y, u]
                gv[ic, i, j] = acc
    if floating is float:
        return gw.astype(np.float32)
    return gw
