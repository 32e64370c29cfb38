# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def grow_regions(const cnp.int64_t[:, ::1] coords):
    cdef Py_ssize_t n = coords.shape[0]
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    if n == 0:
        return labels_arr
    cdef cnp.int64_t x0 = coords[0, 0], y0 = coords[0, 1], z0 = coords[0, 2]
    cdef cnp.int64_t x1 = x0, y1 = y0, z1 = z0
    cdef Py_ssize_t i, j, head, tail, q
    for i in range(n):
        if coords[i, 0] < x0: x0 = coords[i, 0]
        if coords[i, 0] > x1: x1 = coords[i, 0]
        if coords[i, 1] < y0: y0 = coords[i, 1]
        if coords[i, 1] > y1: y1 = coords[i, 1]
        if coords[i, 2] < z0: z0 = coords[i, 2]
        if coords[i, 2] > z1: z1 = coords[i, 2]
    # one cell of margin on each side removes bounds checks in the scan
    cdef cnp.int64_t sx = x1 - x0 + 3, sy = y1 - y0 + 3, sz = z1 - z0 + 3
    grid_arr = np.full(sx * sy * sz, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] grid = grid_arr
    cdef cnp.int64_t cell
    for i in range(n):
        cell = (coords[i, 0] - x0 + 1) + sx * ((coords[i, 1] - y0 + 1) + sy * (coords[i, 2] - z0 + 1))
        if grid[cell] >= 0:
            raise ValueError("duplicate grid point %r" % (tuple(coords[i]),))
        grid[cell] = i
    offs_arr = np.empty(26, dtype=np.int64)
    cdef cnp.int64_t[::1] offs = offs_arr
    cdef int dx, dy, dz, k = 0
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                offs[k] = dx + sx * (dy + sy * dz)
                k += 1
    queue_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] queue = queue_arr
    cdef cnp.int64_t current = 0, base
    for i in range(n):
        if labels[i] >= 0:
            continue
        labels[i] = current
        head = 0
        tail = 1
        queue[0] = i
        while head < tail:
            q = queue[head]
            head += 1
            base = (coords[q, 0] - x0 + 1) + sx * ((coords[q, 1] - y0 + 1) + sy * (coords[q, 2] - z0 + 1))
            for k in range(26):
                j = grid[base + offs[k]]
                if j >= 0 and labels[j] < 0:
                    labels[j] = current
                    queue[tail] = j
                    tail += 1
        current += 1
    return labels_arr


def mean_shift(const double[:, ::1] points, seeds, double bandwidth, double tol, int max_iter):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1]
    modes_arr = np.array(seeds, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] modes = modes_arr
    cdef Py_ssize_t m = modes.shape[0]
    iters_arr = np.zeros(m, dtype=np.int64)
    conv_arr = np.zeros(m, dtype=bool)
    cdef cnp.int64_t[::1] iters = iters_arr
    cdef cnp.npy_bool[::1] conv = conv_arr
    cdef double inv = 1.0 / (2.0 * bandwidth * bandwidth)
    cdef double[::1] acc = np.zeros(d, dtype=np.float64)
    cdef double[::1] x = np.zeros(d, dtype=np.float64)
    cdef Py_ssize_t s, i, c
    cdef int it
    cdef double wsum, w, d2, diff, shift
    for s in range(m):
        for c in range(d):
            x[c] = modes[s, c]
        for it in range(max_iter):
            wsum = 0.0
            for c in range(d):
                acc[c] = 0.0
            for i in range(n):
                d2 = 0.0
                for c in range(d):
                    diff = points[i, c] - x[c]
                    d2 += diff * diff
                w = exp(-d2 * inv)
                wsum += w
                for c in range(d):
                    acc[c] += w * points[i, c]
            shift = 0.0
            for c in range(d):
                diff = acc[c] / wsum - x[c]
                shift += diff * diff
                x[c] = acc[c] / wsum
            iters[s] = it + 1
            if sqrt(shift) < tol:
                conv[s] = True
                break
        for c in range(d):
            modes[s, c] = x[c]
    return modes_arr, iters_arr, conv_arr


def _pool_fwd(const real[:, :, :, ::1] x, real[:, :, :, ::1] out, int[:, :, :, ::1] arg, int a):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t Ho = out.shape[2], Wo = out.shape[3]
    cdef Py_ssize_t n, ch, i, j, u, v
    cdef real best, val
    cdef int bi
    for n in range(N):
        for ch in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    best = x[n, ch, i * a, j * a]
                    bi = 0
                    for u in range(a):
                        for v in range(a):
                            val = x[n, ch, i * a + u, j * a + v]
                            if val > best:
                                best = val
                                bi = u * a + v
                    out[n, ch, i, j] = best
                    arg[n, ch, i, j] = bi


def _pool_bwd(const real[:, :, :, ::1] dout, const int[:, :, :, ::1] arg, real[:, :, :, ::1] dx, int a):
    cdef Py_ssize_t N = dout.shape[0], C = dout.shape[1]
    cdef Py_ssize_t Ho = dout.shape[2], Wo = dout.shape[3]
    cdef Py_ssize_t n, ch, i, j
    cdef int bi
    for n in range(N):
        for ch in range(C):
            for i in range(Ho):
                for j in range(Wo):
                    bi = arg[n, ch, i, j]
                    dx[n, ch, i * a + bi // a, j * a + bi % a] += dout[n, ch, i, j]


def maxpool_forward(x, int a):
    x = np.ascontiguousarray(x)
    N, C, H, W = x.shape
    out = np.empty((N, C, H // a, W // a), dtype=x.dtype)
    arg = np.empty((N, C, H // a, W // a), dtype=np.int32)
    _pool_fwd(x, out, arg, a)
    return out, arg


def maxpool_backward(dout, argmax, in_shape, int a):
    dout = np.ascontiguousarray(dout)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    _pool_bwd(dout, np.ascontiguousarray(argmax, dtype=np.int32), dx, a)
    return dx
