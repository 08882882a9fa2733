"""Backend selection for the convolution hot loops.

The compiled Cython module is used when importable; ``DPNAS_PURE_PYTHON=1``
forces the numpy fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_c = None
if os.environ.get("DPNAS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _c = None


def available_backends():
    return ["python", "cython"] if _c is not None else ["python"]


def im2col(x, k, backend=None):
    if (backend or BACKEND) == "cython" and k > 1:
        return _c.im2col(np.ascontiguousarray(x), k)
    return _pykernels.im2col(x, k)


def col2im(cols, shape, k, backend=None):
    if (backend or BACKEND) == "cython" and k > 1:
        n, c, h, w = shape
        return _c.col2im(np.ascontiguousarray(cols), n, c, h, w, k)
    return _pykernels.col2im(cols, shape, k)
