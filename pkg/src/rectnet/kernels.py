"""Kernel dispatch: compiled extension when importable, numpy fallback otherwise.

Set ``RECTNET_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("RECTNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

# dense lookup grids above this many cells fall back to the hashing version
_MAX_GRID_CELLS = 50_000_000


def grow_regions(coords) -> np.ndarray:
    c = np.ascontiguousarray(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
    if BACKEND == "cython" and len(c):
        extent = np.prod(c.max(axis=0) - c.min(axis=0) + 3, dtype=np.float64)
        if extent <= _MAX_GRID_CELLS:
            return _impl.grow_regions(c)
    return _pykernels.grow_regions(c)


def mean_shift(points, seeds, bandwidth: float, tol: float, max_iter: int):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    return _impl.mean_shift(pts, np.asarray(seeds, dtype=np.float64), float(bandwidth), float(tol), int(max_iter))


def maxpool_forward(x, a: int):
    return _impl.maxpool_forward(x, int(a))


def maxpool_backward(dout, argmax, in_shape, a: int):
    return _impl.maxpool_backward(dout, argmax, tuple(in_shape), int(a))
