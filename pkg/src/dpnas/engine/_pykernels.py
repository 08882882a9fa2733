"""Pure-numpy convolution data-movement kernels (fallback backend).

Both kernels assume stride 1, odd kernel ``k`` and zero padding ``k // 2``.
Column layout is ``(n, c * k * k, h * w)`` with rows ordered channel, ky, kx
so that a ``(c_out, c_in, k, k)`` weight reshaped to ``(c_out, -1)`` multiplies
it directly.
"""

import numpy as np


def im2col(x, k):
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(n, c * k * k, h * w)


def col2im(cols, shape, k):
    n, c, h, w = shape
    if k == 1:
        return cols.reshape(n, c, h, w).copy()
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    # accumulation order (i, j) is shared with the compiled kernel
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return np.ascontiguousarray(xp[:, :, p:p + h, p:p + w])
