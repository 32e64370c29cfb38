import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rectnet import _pykernels, kernels
from rectnet.selftest import union_find_partition

from oracles import maxpool_loops

try:
    from rectnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def _points(seed, n, extent):
    rng = np.random.default_rng(seed)
    return np.unique(rng.integers(0, extent, size=(n, 3)), axis=0)


def _groups(labels):
    out = {}
    for i, lab in enumerate(labels.tolist()):
        out.setdefault(lab, set()).add(i)
    return {frozenset(g) for g in out.values()}


@given(st.integers(0, 10_000), st.integers(1, 300), st.integers(2, 15))
def test_python_regions_match_union_find(seed, n, extent):
    pts = _points(seed, n, extent)
    assert _groups(_pykernels.grow_regions(pts)) == union_find_partition(pts)


@needs_ext
@given(st.integers(0, 10_000), st.integers(1, 300), st.integers(2, 15))
def test_compiled_regions_identical_to_python(seed, n, extent):
    pts = _points(seed, n, extent)
    assert np.array_equal(_ckernels.grow_regions(pts), _pykernels.grow_regions(pts))


def test_region_labels_follow_first_reach_order():
    pts = np.array([[10, 10, 0], [0, 0, 0], [1, 1, 1], [11, 11, 0], [5, 5, 5]])
    assert kernels.grow_regions(pts).tolist() == [0, 1, 1, 0, 2]


def test_diagonal_corner_touch_is_connected():
    assert kernels.grow_regions([[0, 0, 0], [1, 1, 1]]).tolist() == [0, 0]
    assert kernels.grow_regions([[0, 0, 0], [2, 0, 0]]).tolist() == [0, 1]


def test_duplicate_points_rejected():
    with pytest.raises(ValueError):
        _pykernels.grow_regions([[1, 2, 3], [1, 2, 3]])


def test_empty_input():
    assert kernels.grow_regions(np.zeros((0, 3))).shape == (0,)


def test_sparse_far_points_use_hash_path():
    pts = np.array([[0, 0, 0], [10**6, 10**6, 10**3], [10**6 + 1, 10**6, 10**3]])
    assert kernels.grow_regions(pts).tolist() == [0, 1, 1]


@given(st.integers(0, 10_000))
def test_mean_shift_backends_agree(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3)) * 3
    seeds = pts[:10]
    a = _pykernels.mean_shift(pts, seeds, 1.5, 1.5e-3, 500)
    b = kernels.mean_shift(pts, seeds, 1.5, 1.5e-3, 500)
    assert np.allclose(a[0], b[0], atol=1e-9)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])


def test_mean_shift_single_point_is_fixed():
    modes, iters, conv = kernels.mean_shift([[1.0, 2.0, 3.0]], [[1.0, 2.0, 3.0]], 1.5, 1e-3, 500)
    assert np.allclose(modes, [[1, 2, 3]]) and iters.tolist() == [1] and conv.all()


def test_mean_shift_reports_non_convergence():
    pts = np.array([[0.0, 0, 0], [6.0, 0, 0]])
    _, iters, conv = kernels.mean_shift(pts, [[2.9, 0, 0]], 1.5, 1e-12, 3)
    assert iters.tolist() == [3] and not conv.any()


@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 2, 3]))
def test_maxpool_matches_loops(seed, c, h, w, a):
    if h < a or w < a:
        return
    x = np.random.default_rng(seed).normal(size=(2, c, h, w))
    out, arg = kernels.maxpool_forward(x, a)
    assert all(np.array_equal(o, maxpool_loops(xi, a)) for o, xi in zip(out, x))
    py_out, py_arg = _pykernels.maxpool_forward(x, a)
    assert np.array_equal(out, py_out) and np.array_equal(arg, py_arg)
    d = np.random.default_rng(seed + 1).normal(size=out.shape)
    assert np.array_equal(kernels.maxpool_backward(d, arg, x.shape, a), _pykernels.maxpool_backward(d, py_arg, x.shape, a))


def test_maxpool_tie_goes_to_first():
    x = np.ones((1, 1, 2, 2))
    _, arg = kernels.maxpool_forward(x, 2)
    dx = kernels.maxpool_backward(np.ones((1, 1, 1, 1)), arg, x.shape, 2)
    assert dx[0, 0].tolist() == [[1, 0], [0, 0]]


def test_pure_python_switch():
    env = dict(os.environ, RECTNET_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from rectnet import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
def test_compiled_backend_is_default():
    assert kernels.BACKEND == "cython"
