"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def im2col(xp, k, cols):
    n, hp, wp, c = xp.shape
    h, w = hp - k + 1, wp - k + 1
    view = cols.reshape(n, h, w, k * k, c)
    for ky in range(k):
        for kx in range(k):
            view[:, :, :, ky * k + kx, :] = xp[:, ky:ky + h, kx:kx + w, :]


def col2im(dcols, dxp, k):
    n, hp, wp, c = dxp.shape
    h, w = hp - k + 1, wp - k + 1
    view = dcols.reshape(n, h, w, k * k, c)
    for ky in range(k):
        for kx in range(k):
            dxp[:, ky:ky + h, kx:kx + w, :] += view[:, :, :, ky * k + kx, :]


def order_flips(a, b, chunk=512):
    total = 0
    for start in range(0, a.size, chunk):
        ra = a[start:start + chunk, None] >= a[None, :]
        rb = b[start:start + chunk, None] >= b[None, :]
        total += int(np.count_nonzero(ra != rb))
    return total
