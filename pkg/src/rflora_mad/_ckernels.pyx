# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled residual kernels.

Every routine mirrors the accumulation order of the numpy fallback in
``_pykernels`` so both backends agree to the last bit on the same platform.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline Py_ssize_t _reflect(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    if i < 0:
        i += period
    if i >= n:
        i = period - i
    return i


cdef void _fill_reflect(Py_ssize_t* idx, Py_ssize_t n, Py_ssize_t radius) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(n + 2 * radius):
        idx[j] = _reflect(j - radius, n)


cdef void _smooth(double[:, ::1] src, double[:, ::1] tmp, double[:, ::1] dst,
                  double[::1] w) noexcept nogil:
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t wd = src.shape[1]
    cdef Py_ssize_t radius = (w.shape[0] - 1) // 2
    cdef Py_ssize_t taps = 2 * radius + 1
    cdef Py_ssize_t y, x, k
    cdef double acc
    cdef Py_ssize_t* ix = <Py_ssize_t*>malloc((wd + 2 * radius) * sizeof(Py_ssize_t))
    cdef Py_ssize_t* iy = <Py_ssize_t*>malloc((h + 2 * radius) * sizeof(Py_ssize_t))
    _fill_reflect(ix, wd, radius)
    _fill_reflect(iy, h, radius)
    for y in range(h):
        for x in range(wd):
            acc = 0.0
            for k in range(taps):
                acc = acc + w[k] * src[y, ix[x + k]]
            tmp[y, x] = acc
    for y in range(h):
        for x in range(wd):
            acc = 0.0
            for k in range(taps):
                acc = acc + w[k] * tmp[iy[y + k], x]
            dst[y, x] = acc
    free(ix)
    free(iy)


cdef void _laplacian_abs(double[:, ::1] src, double[:, ::1] dst) noexcept nogil:
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t wd = src.shape[1]
    cdef Py_ssize_t y, x, up, down, left, right
    cdef double v
    for y in range(h):
        up = _reflect(y - 1, h)
        down = _reflect(y + 1, h)
        for x in range(wd):
            if 0 < x < wd - 1:
                left = x - 1
                right = x + 1
            else:
                left = _reflect(x - 1, wd)
                right = _reflect(x + 1, wd)
            v = (src[up, x] + src[down, x] + src[y, left] + src[y, right]) - 4.0 * src[y, x]
            dst[y, x] = fabs(v)


cdef void _minmax(double[:, ::1] r) noexcept nogil:
    cdef Py_ssize_t h = r.shape[0]
    cdef Py_ssize_t wd = r.shape[1]
    cdef Py_ssize_t y, x
    cdef double lo = r[0, 0]
    cdef double hi = r[0, 0]
    for y in range(h):
        for x in range(wd):
            if r[y, x] < lo:
                lo = r[y, x]
            if r[y, x] > hi:
                hi = r[y, x]
    if hi == lo:
        for y in range(h):
            for x in range(wd):
                r[y, x] = 0.0
        return
    for y in range(h):
        for x in range(wd):
            r[y, x] = (r[y, x] - lo) / (hi - lo)


cdef void _patch_stats(double[:, ::1] r, Py_ssize_t p, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t hp = r.shape[0] // p
    cdef Py_ssize_t wp = r.shape[1] // p
    cdef Py_ssize_t py, px, y, x, i
    cdef double m = <double>(p * p)
    cdef double s, s2, sq, mu, d
    for py in range(hp):
        for px in range(wp):
            i = py * wp + px
            s = 0.0
            sq = 0.0
            for y in range(py * p, py * p + p):
                for x in range(px * p, px * p + p):
                    s = s + r[y, x]
                    sq = sq + r[y, x] * r[y, x]
            mu = s / m
            s2 = 0.0
            for y in range(py * p, py * p + p):
                for x in range(px * p, px * p + p):
                    d = r[y, x] - mu
                    s2 = s2 + d * d
            out[i, 0] = mu
            out[i, 1] = s2 / m
            out[i, 2] = sq / m


def to_grey(img):
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t wd = src.shape[1]
    cdef Py_ssize_t y, x
    out = np.empty((h, wd), dtype=np.float64)
    cdef double[:, ::1] dst = out
    with nogil:
        for y in range(h):
            for x in range(wd):
                dst[y, x] = 0.114 * src[y, x, 2] + 0.587 * src[y, x, 1] + 0.299 * src[y, x, 0]
    return out


def gaussian_smooth(img, weights):
    arr = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] src = arr
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    tmp = np.empty_like(arr)
    out = np.empty_like(arr)
    cdef double[:, ::1] tv = tmp
    cdef double[:, ::1] ov = out
    with nogil:
        _smooth(src, tv, ov, w)
    return out


def laplacian_abs(img):
    arr = np.ascontiguousarray(img, dtype=np.float64)
    cdef double[:, ::1] src = arr
    out = np.empty_like(arr)
    cdef double[:, ::1] ov = out
    with nogil:
        _laplacian_abs(src, ov)
    return out


def minmax_normalize(raw):
    out = np.array(raw, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] r = out
    with nogil:
        _minmax(r)
    return out


def patch_stats(r_map, Py_ssize_t p):
    cdef double[:, ::1] r = np.ascontiguousarray(r_map, dtype=np.float64)
    out = np.empty(((r.shape[0] // p) * (r.shape[1] // p), 3), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        _patch_stats(r, p, ov)
    return out


def residual_stats(img, weights, Py_ssize_t p):
    """Fused grey -> smooth -> |laplacian| -> min-max -> patch stats."""
    cdef double[:, :, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0]
    cdef Py_ssize_t wd = src.shape[1]
    cdef Py_ssize_t y, x
    grey = np.empty((h, wd), dtype=np.float64)
    tmp = np.empty((h, wd), dtype=np.float64)
    smooth = np.empty((h, wd), dtype=np.float64)
    r = np.empty((h, wd), dtype=np.float64)
    stats = np.empty(((h // p) * (wd // p), 3), dtype=np.float64)
    cdef double[:, ::1] g = grey
    cdef double[:, ::1] t = tmp
    cdef double[:, ::1] sm = smooth
    cdef double[:, ::1] rv = r
    cdef double[:, ::1] st = stats
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    with nogil:
        for y in range(h):
            for x in range(wd):
                g[y, x] = 0.114 * src[y, x, 2] + 0.587 * src[y, x, 1] + 0.299 * src[y, x, 0]
        _smooth(g, t, sm, w)
        _laplacian_abs(sm, rv)
        _minmax(rv)
        _patch_stats(rv, p, st)
    return r, stats
