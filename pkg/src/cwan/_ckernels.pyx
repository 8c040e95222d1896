# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the convolution engine and the LOE metric.

Every routine here has a drop-in numpy twin in :mod:`cwan._pykernels`;
accumulation order is kept identical so both backends agree bit for bit.
"""

import numpy as np

ctypedef fused real:
    float
    double


def im2col(const real[:, :, :, ::1] xp, int k, real[:, ::1] cols):
    """Gather k*k shifted windows of a padded NHWC array into rows.

    Column layout is (ky, kx, c), so each row holds k*k contiguous
    runs of C channel values.
    """
    cdef Py_ssize_t n_img = xp.shape[0]
    cdef Py_ssize_t h = xp.shape[1] - k + 1
    cdef Py_ssize_t w = xp.shape[2] - k + 1
    cdef Py_ssize_t c = xp.shape[3]
    cdef Py_ssize_t n, y, x, ky, kx, ch, row, base
    with nogil:
        row = 0
        for n in range(n_img):
            for y in range(h):
                for x in range(w):
                    base = 0
                    for ky in range(k):
                        for kx in range(k):
                            for ch in range(c):
                                cols[row, base + ch] = xp[n, y + ky, x + kx, ch]
                            base = base + c
                    row = row + 1


def col2im(const real[:, ::1] dcols, real[:, :, :, ::1] dxp, int k):
    """Scatter-add row gradients back onto a zeroed padded NHWC buffer.

    The kernel offset is the outermost loop, matching the slice-add order
    of the numpy fallback.
    """
    cdef Py_ssize_t n_img = dxp.shape[0]
    cdef Py_ssize_t h = dxp.shape[1] - k + 1
    cdef Py_ssize_t w = dxp.shape[2] - k + 1
    cdef Py_ssize_t c = dxp.shape[3]
    cdef Py_ssize_t n, y, x, ky, kx, ch, row, base
    with nogil:
        for ky in range(k):
            for kx in range(k):
                base = (ky * k + kx) * c
                row = 0
                for n in range(n_img):
                    for y in range(h):
                        for x in range(w):
                            for ch in range(c):
                                dxp[n, y + ky, x + kx, ch] += dcols[row, base + ch]
                            row = row + 1


def order_flips(const double[::1] a, const double[::1] b):
    """Count ordered pairs (i, j) whose ``>=`` relation differs between a and b."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j
    cdef long long total = 0
    cdef double ai, bi
    with nogil:
        for i in range(n):
            ai = a[i]
            bi = b[i]
            for j in range(n):
                if (ai >= a[j]) != (bi >= b[j]):
                    total += 1
    return total
