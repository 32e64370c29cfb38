import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rectnet.detector import CandidateNodule
from rectnet.evaluator import (NA, aggregate, filter_agreement, froc, match_candidates, save_strata_csv,
                               stratified_sensitivity, sweep_grid)
from rectnet.volume_io import NoduleAnnotation

from oracles import brute_matcher


def _cand(voxels, p=0.9):
    v = np.asarray(voxels, dtype=np.int64).reshape(-1, 3)
    return CandidateNodule(v, np.full(len(v), p), (1.0, 1.0, 1.0))


def _cube(nid, corner, side=3, **kw):
    x0, y0, z0 = corner
    g = np.stack(np.meshgrid(*[np.arange(side)] * 3, indexing="ij"), -1).reshape(-1, 3)
    return NoduleAnnotation(nid, g + [x0, y0, z0], **kw)


def test_candidate_inside_nodule_is_a_hit():
    out = match_candidates([_cand([[21, 21, 6]])], [_cube(1, (20, 20, 5))])
    assert (out.hits, out.tp, out.fp) == (1, 1, 0)


def test_far_candidate_is_a_false_positive():
    out = match_candidates([_cand([[100, 100, 30]])], [_cube(1, (20, 20, 5))])
    assert (out.hits, out.tp, out.fp) == (0, 0, 1)


def test_dilation_reaches_one_grid_step():
    ann = [_cube(1, (20, 20, 5))]
    assert match_candidates([_cand([[26, 16, 4]])], ann, grid_step=4).tp == 1
    assert match_candidates([_cand([[27, 20, 5]])], ann, grid_step=4).tp == 0
    assert match_candidates([_cand([[21, 21, 9]])], ann, grid_step=4).tp == 0


def test_largest_overlap_wins_then_smaller_id():
    a, b = _cube(2, (0, 0, 0)), _cube(1, (20, 0, 0))
    cand = _cand([[1, 1, 1], [21, 1, 1], [21, 2, 1]])
    assert match_candidates([cand], [a, b], grid_step=0).assignment == [1]
    tie = _cand([[1, 1, 1], [21, 1, 1]])
    assert match_candidates([tie], [a, b], grid_step=0).assignment == [1]


def test_one_candidate_hits_at_most_one_nodule():
    out = match_candidates([_cand([[1, 1, 1], [21, 1, 1]])], [_cube(1, (0, 0, 0)), _cube(2, (20, 0, 0))], 0)
    assert out.hits == 1 and out.tp == 1


def _random_case(rng):
    nodules = [_cube(i + 1, tuple(rng.integers(0, 30, 3)), int(rng.integers(1, 5))) for i in range(rng.integers(1, 4))]
    cands = []
    for _ in range(rng.integers(0, 6)):
        c = rng.integers(0, 34, 3)
        cands.append(_cand(np.unique(c + rng.integers(-2, 3, size=(rng.integers(1, 6), 3)), axis=0)))
    return cands, nodules


@given(st.integers(0, 100_000), st.integers(0, 4))
def test_matches_brute_force_matcher(seed, step):
    cands, nodules = _random_case(np.random.default_rng(seed))
    got = match_candidates(cands, nodules, grid_step=step)
    want_assign, want_hit = brute_matcher([c.voxels.tolist() for c in cands],
                                          {a.id: a.voxels.tolist() for a in nodules}, step)
    assert got.assignment == want_assign and got.hit == want_hit
    assert got.tp + got.fp == len(cands)
    assert got.hits <= len(nodules)


def test_ten_case_suite_with_known_overlaps():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        cands, nodules = _random_case(rng)
        got = match_candidates(cands, nodules, 4)
        want, _ = brute_matcher([c.voxels.tolist() for c in cands], {a.id: a.voxels.tolist() for a in nodules}, 4)
        assert got.assignment == want


def _suite():
    anns = {"a": [_cube(1, (10, 10, 5)), _cube(2, (60, 60, 5))], "b": [_cube(1, (30, 30, 8))]}
    cands = {"a": [_cand([[11, 11, 6]], 0.95), _cand([[61, 61, 6]], 0.7), _cand([[90, 5, 2]], 0.8)],
             "b": [_cand([[31, 31, 9]], 0.6), _cand([[5, 90, 1]], 0.99)]}
    return anns, lambda vid, p: [c for c in cands[vid] if c.mean_probability > p]


def test_froc_sweep_and_limits():
    anns, at = _suite()
    curve = froc(at, anns, sweep_grid(0.5, 1.0, 0.05))
    rows = curve.rows()
    assert curve.fps_per_scan == sorted(curve.fps_per_scan)
    top = [r for r in rows if r[0] == 1.0][0]
    assert top[1:] == (0.0, 0.0)
    low = [r for r in rows if r[0] == 0.5][0]
    assert low[1:] == (1.0, 1.0)
    by_p = sorted(rows)
    assert all(s1 >= s2 for (_, _, s1), (_, _, s2) in zip(by_p, by_p[1:]))
    assert curve.sensitivity_at(0.5) == pytest.approx(1 / 3)
    assert curve.sensitivity_at(1.0) == 1.0


def test_froc_errors():
    with pytest.raises(ValueError):
        froc(lambda v, p: [], {}, [0.5])
    with pytest.raises(ValueError):
        froc(lambda v, p: [], {"a": []}, [0.5])
    with pytest.raises(ValueError):
        aggregate([])


def test_froc_csv(tmp_path):
    anns, at = _suite()
    froc(at, anns, [0.5, 0.9]).save_csv(tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["accept_p", "fps_per_scan", "sensitivity"] and len(rows) == 3


def test_strata_all_hit_and_empty_classes(tmp_path):
    anns = {"a": [_cube(1, (0, 0, 0), subtlety=(5, 5), malignancy=(1,), agreement_level=2),
                  _cube(2, (20, 0, 0), subtlety=(1, 2), malignancy=(5,), agreement_level=4)]}
    out = [match_candidates([_cand([[1, 1, 1]]), _cand([[21, 1, 1]])], anns["a"], 0, "a")]
    sub = stratified_sensitivity(out, anns, "subtlety")
    populated = [r for r in sub.values() if r["n"]]
    assert populated and all(r["sensitivity"] == 1.0 for r in populated)
    assert any(r["sensitivity"] == NA for r in sub.values())
    agree = stratified_sensitivity(out, anns, "agreement")
    assert agree[1]["sensitivity"] == NA and agree[4] == {"n": 1, "hits": 1, "sensitivity": 1.0}
    save_strata_csv({"subtlety": sub, "agreement": agree}, tmp_path / "s.csv")
    text = (tmp_path / "s.csv").read_text()
    assert "N/A" in text and text.startswith("stratum,class,n,hits,sensitivity")
    with pytest.raises(ValueError):
        stratified_sensitivity(out, anns, "size")


def test_missed_nodule_counts_against_its_class():
    anns = {"a": [_cube(1, (0, 0, 0), malignancy=(1,)), _cube(2, (20, 0, 0), malignancy=(5,))]}
    out = [match_candidates([_cand([[1, 1, 1]])], anns["a"], 0, "a")]
    table = stratified_sensitivity(out, anns, "malignancy")
    assert sorted(r["sensitivity"] for r in table.values() if r["n"]) == [0.0, 1.0]


def test_agreement_filter():
    anns = {"a": [_cube(1, (0, 0, 0), agreement_level=2), _cube(2, (20, 0, 0), agreement_level=4)]}
    assert [a.id for a in filter_agreement(anns, 4)["a"]] == [2]
    assert len(filter_agreement(anns, 1)["a"]) == 2


def test_sweep_grid():
    g = sweep_grid(0.5, 0.99, 0.01)
    assert len(g) == 50 and g[0] == 0.5 and g[-1] == 0.99
    with pytest.raises(ValueError):
        sweep_grid(0.9, 0.5, 0.1)
