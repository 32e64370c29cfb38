from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rectnet.lung_seg import SegmentationConfig, dilate, disk, remove_background_fill, segment_lungs, threshold_mask
from rectnet.volume_io import Volume

from oracles import iou


def _vol(data):
    data = np.asarray(data, dtype=np.int16)
    nz, ny, nx = data.shape
    return Volume((nx, ny, nz), (1, 1, 1), data)


def test_threshold_examples():
    m = threshold_mask(_vol([[[-600, -100, -480]]]))
    assert m.data.tolist() == [[[True, False, False]]]
    assert threshold_mask(_vol(np.full((2, 3, 3), -1000))).data.all()


@given(a=st.integers(-1024, 400), b=st.integers(-1024, 400), seed=st.integers(0, 1000))
def test_threshold_monotone(a, b, seed):
    t1, t2 = sorted((a, b))
    v = _vol(np.random.default_rng(seed).integers(-1024, 500, size=(2, 5, 5)))
    assert not (threshold_mask(v, t1).data & ~threshold_mask(v, t2).data).any()


def test_all_true_slice_is_background():
    assert not remove_background_fill(np.ones((6, 6), bool)).any()


def test_ring_is_filled():
    yy, xx = np.mgrid[:15, :15]
    r2 = (xx - 7) ** 2 + (yy - 7) ** 2
    ring = (r2 <= 25) & (r2 >= 9)
    assert np.array_equal(remove_background_fill(ring), r2 <= 25)


def _fill_oracle(m):
    """Breadth-first flood from the border over true pixels, then from the border over false pixels."""
    H, W = m.shape
    outside_true = np.zeros_like(m)
    q = deque((i, j) for i in range(H) for j in range(W) if (i in (0, H - 1) or j in (0, W - 1)) and m[i, j])
    for p in q:
        outside_true[p] = True
    while q:
        i, j = q.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < H and 0 <= b < W and m[a, b] and not outside_true[a, b]:
                outside_true[a, b] = True
                q.append((a, b))
    kept = m & ~outside_true
    reach = np.zeros_like(m)
    q = deque((i, j) for i in range(H) for j in range(W) if (i in (0, H - 1) or j in (0, W - 1)) and not kept[i, j])
    for p in q:
        reach[p] = True
    while q:
        i, j = q.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < H and 0 <= b < W and not kept[a, b] and not reach[a, b]:
                reach[a, b] = True
                q.append((a, b))
    return ~reach


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_fill_matches_flood_oracle(m):
    assert np.array_equal(remove_background_fill(m), _fill_oracle(m))


@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_fill_idempotent(m):
    once = remove_background_fill(m)
    assert np.array_equal(remove_background_fill(once), once)


def test_dilate_radius_zero_identity(rng):
    m = rng.random((3, 8, 8)) < 0.2
    assert np.array_equal(dilate(m, 0), m)


def test_single_pixel_radius_two_gives_13():
    m = np.zeros((1, 9, 9), bool)
    m[0, 4, 4] = True
    assert dilate(m, 2).sum() == 13
    assert disk(2).sum() == 13


def _dilate_oracle(m, r):
    out = np.zeros_like(m)
    Z, H, W = m.shape
    for z, i, j in zip(*np.nonzero(m)):
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                if di * di + dj * dj <= r * r and 0 <= i + di < H and 0 <= j + dj < W:
                    out[z, i + di, j + dj] = True
    return out


@given(arrays(bool, st.tuples(st.integers(1, 3), st.integers(1, 10), st.integers(1, 10))), st.integers(0, 4))
def test_dilate_matches_oracle_and_is_monotone(m, r):
    d = dilate(m, r)
    assert np.array_equal(d, _dilate_oracle(m, r))
    assert not (m & ~d).any()


def test_dilation_is_per_slice():
    m = np.zeros((3, 7, 7), bool)
    m[1, 3, 3] = True
    d = dilate(m, 2)
    assert not d[0].any() and not d[2].any()


def test_all_body_volume_gives_empty_mask():
    assert not segment_lungs(_vol(np.zeros((3, 20, 20)))).data.any()


def test_segmentation_covers_fill_and_nodules(desk_phantom):
    spec, vol, truth, anns = desk_phantom
    seg = segment_lungs(vol)
    filled = segment_lungs(vol, SegmentationConfig(dilate_radius=0))
    assert not (filled.data & ~seg.data).any()
    assert iou(filled.data, truth.data) > 0.85
    for a in anns:
        assert seg.data[a.voxels[:, 2], a.voxels[:, 1], a.voxels[:, 0]].all()
