# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Output must match ``_pykernels`` bit for bit."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(x, int k, int stride, int pad):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t B = xa.shape[0], C = xa.shape[1], H = xa.shape[2], W = xa.shape[3]
    cdef Py_ssize_t OH = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, C * k * k, OH * OW), dtype=np.float64)
    cdef double[:, :, :] o = out
    cdef double[:, :, :, :] xv = xa
    cdef Py_ssize_t b, c, ki, kj, oh, ow, row, ih, iw
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for oh in range(OH):
                            ih = oh * stride + ki - pad
                            if ih < 0 or ih >= H:
                                continue
                            for ow in range(OW):
                                iw = ow * stride + kj - pad
                                if iw < 0 or iw >= W:
                                    continue
                                o[b, row, oh * OW + ow] = xv[b, c, ih, iw]
    return out


def col2im(cols, shape, int k, int stride, int pad):
    cdef Py_ssize_t B = shape[0], C = shape[1], H = shape[2], W = shape[3]
    cdef Py_ssize_t OH = (H + 2 * pad - k) // stride + 1
    cdef Py_ssize_t OW = (W + 2 * pad - k) // stride + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] ca = np.ascontiguousarray(
        cols, dtype=np.float64).reshape(B, C * k * k, OH * OW)
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, :] o = out
    cdef double[:, :, :] cv = ca
    cdef Py_ssize_t b, c, ki, kj, oh, ow, row, ih, iw
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        for oh in range(OH):
                            ih = oh * stride + ki - pad
                            if ih < 0 or ih >= H:
                                continue
                            for ow in range(OW):
                                iw = ow * stride + kj - pad
                                if iw < 0 or iw >= W:
                                    continue
                                o[b, c, ih, iw] += cv[b, row, oh * OW + ow]
    return out


def points_in_polygon(px, py, poly):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xa = np.ascontiguousarray(px, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ya = np.ascontiguousarray(py, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pa = np.ascontiguousarray(poly, dtype=np.float64)
    cdef Py_ssize_t m = xa.shape[0], n = pa.shape[0]
    res = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[:] r = res
    cdef double[:] xv = xa
    cdef double[:] yv = ya
    cdef double[:, :] pv = pa
    cdef Py_ssize_t p, i, j
    cdef double xi, yi, xj, yj, x, y, xcross
    cdef unsigned char inside
    with nogil:
        for p in range(m):
            x = xv[p]
            y = yv[p]
            inside = 0
            j = n - 1
            for i in range(n):
                xi = pv[i, 0]
                yi = pv[i, 1]
                xj = pv[j, 0]
                yj = pv[j, 1]
                if (yi > y) != (yj > y):
                    xcross = (xj - xi) * (y - yi) / (yj - yi) + xi
                    if x < xcross:
                        inside ^= 1
                j = i
            r[p] = inside
    return res.astype(bool).reshape(np.shape(px))
