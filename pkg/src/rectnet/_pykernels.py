"""Pure-Python/numpy reference versions of the compiled kernels.

Semantics, output order and tie-breaking match ``_ckernels`` exactly.
"""

from __future__ import annotations

from collections import deque

import numpy as np

NEIGHBOURS_26 = [(dx, dy, dz) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                 if (dx, dy, dz) != (0, 0, 0)]


def grow_regions(coords) -> np.ndarray:
    """Region growing over integer grid points with 26-connectivity.

    Seeds are taken in input order; a cluster's label is the order in which
    its first member is reached. Duplicate coordinates are rejected.
    """
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    n = len(c)
    labels = np.full(n, -1, dtype=np.int64)
    index = {}
    for i, key in enumerate(map(tuple, c.tolist())):
        if key in index:
            raise ValueError(f"duplicate grid point {key}")
        index[key] = i
    pts = c.tolist()
    current = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        labels[seed] = current
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            x, y, z = pts[i]
            for dx, dy, dz in NEIGHBOURS_26:
                j = index.get((x + dx, y + dy, z + dz))
                if j is not None and labels[j] < 0:
                    labels[j] = current
                    queue.append(j)
        current += 1
    return labels


def mean_shift(points, seeds, bandwidth: float, tol: float, max_iter: int):
    """Gaussian-kernel mean shift of each seed over ``points``.

    Returns ``(modes, iterations, converged)``. A seed stops once its shift
    falls below ``tol``.
    """
    X = np.asarray(points, dtype=np.float64)
    S = np.array(seeds, dtype=np.float64, copy=True)
    m = len(S)
    iters = np.zeros(m, dtype=np.int64)
    converged = np.zeros(m, dtype=bool)
    inv = 1.0 / (2.0 * bandwidth * bandwidth)
    for s in range(m):
        x = S[s]
        for it in range(max_iter):
            d2 = ((X - x) ** 2).sum(axis=1)
            w = np.exp(-d2 * inv)
            new = (w[:, None] * X).sum(axis=0) / w.sum()
            shift = np.sqrt(((new - x) ** 2).sum())
            x = new
            iters[s] = it + 1
            if shift < tol:
                converged[s] = True
                break
        S[s] = x
    return S, iters, converged


def maxpool_forward(x, a: int):
    """Non-overlapping a x a max pooling over the last two axes of (N, C, H, W).

    Trailing rows/columns that do not fill a window are dropped. ``argmax``
    holds the row-major offset of the first maximum inside each window.
    """
    N, C, H, W = x.shape
    Ho, Wo = H // a, W // a
    win = x[:, :, :Ho * a, :Wo * a].reshape(N, C, Ho, a, Wo, a).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(N, C, Ho, Wo, a * a)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int32)


def maxpool_backward(dout, argmax, in_shape, a: int):
    N, C, H, W = in_shape
    Ho, Wo = dout.shape[2], dout.shape[3]
    win = np.zeros((N, C, Ho, Wo, a * a), dtype=dout.dtype)
    np.put_along_axis(win, argmax[..., None].astype(np.int64), dout[..., None], axis=-1)
    win = win.reshape(N, C, Ho, Wo, a, a).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, Ho * a, Wo * a)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :, :Ho * a, :Wo * a] = win
    return dx
