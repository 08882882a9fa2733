# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im for stride-1 'same' convolutions.

Numerically identical to ``_pykernels``: col2im accumulates taps in the same
(ky, kx) order, so both backends produce bit-identical gradients.
"""

import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, int k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int p = k // 2
    if real is float:
        out = np.zeros((n, c * k * k, h * w), dtype=np.float32)
    else:
        out = np.zeros((n, c * k * k, h * w), dtype=np.float64)
    cdef real[:, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, sy, sx, row, y0, y1, x0, x1
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    y0 = p - i if p > i else 0
                    y1 = h + p - i if i > p else h
                    for j in range(k):
                        x0 = p - j if p > j else 0
                        x1 = w + p - j if j > p else w
                        row = (ch * k + i) * k + j
                        for y in range(y0, y1):
                            sy = y + i - p
                            for xx in range(x0, x1):
                                o[b, row, y * w + xx] = x[b, ch, sy, xx + j - p]
    return out


def col2im(real[:, :, ::1] cols, int n, int c, int h, int w, int k):
    cdef int p = k // 2
    if real is float:
        out = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, i, j, y, xx, sy, row, y0, y1, x0, x1
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    y0 = p - i if p > i else 0
                    y1 = h + p - i if i > p else h
                    for j in range(k):
                        x0 = p - j if p > j else 0
                        x1 = w + p - j if j > p else w
                        row = (ch * k + i) * k + j
                        for y in range(y0, y1):
                            sy = y + i - p
                            for xx in range(x0, x1):
                                o[b, ch, sy, xx + j - p] += cols[b, row, y * w + xx]
    return out
