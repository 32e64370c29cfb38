"""Quick built-in checks run by ``rectnet selftest``."""

from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from . import kernels
from .detector import ProbabilityMap, cluster_modes, grow_clusters
from .nn.checkpoint import load_model, save_model
from .nn.gradcheck import layer_gradient_report, model_gradient_error
from .models import CnnBaselineConfig, MultiChannelCNN, RectNetConfig, ReCTNet
from .volume_io import BinaryMask, Volume, read_mask, read_volume, write_mask, write_volume

GRAD_TOL = 1e-4


def union_find_partition(coords) -> set[frozenset[int]]:
    """Connected components under 26-connectivity by pairwise union-find."""
    c = np.asarray(coords, dtype=np.int64)
    parent = list(range(len(c)))

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(c)):
        near = np.flatnonzero(np.abs(c[i + 1:] - c[i]).max(axis=1) <= 1) + i + 1
        for j in near:
            parent[root(i)] = root(int(j))
    groups: dict[int, set[int]] = {}
    for i in range(len(c)):
        groups.setdefault(root(i), set()).add(i)
    return {frozenset(g) for g in groups.values()}


def _partition(clusters) -> set[frozenset[int]]:
    return {frozenset(int(i) for i in c) for c in clusters}


def check_gradients(seed: int = 0) -> tuple[bool, str]:
    report = layer_gradient_report(seed)
    rng = np.random.default_rng(seed)
    tiny = ReCTNet(RectNetConfig(cnn="I(1),C(3,2),P,C(2,2),FC(4)", hidden=3, mlp=(5,), patch=8), seed=seed,
                   dtype=np.float64)
    x = rng.normal(size=(2, 7, 8, 8))
    report["rectnet"] = max(model_gradient_error(tiny, x, np.array([0, 1])).values())
    cnn = MultiChannelCNN(CnnBaselineConfig(arch="I(7),C(3,2),P,C(2,3),FC(4)", patch=8), seed=seed, dtype=np.float64)
    report["cnn"] = max(model_gradient_error(cnn, x, np.array([1, 0])).values())
    worst = max(report.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in report.items())
    return worst < GRAD_TOL, f"max relative error {worst:.2e} ({detail})"


def check_clustering(trials: int = 50, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        n = int(rng.integers(1, 200))
        pts = np.unique(rng.integers(0, 12, size=(n, 3)), axis=0)
        pmap = ProbabilityMap("t", pts * [4, 4, 1], np.ones(len(pts)), 4)
        if _partition(grow_clusters(pmap)) != union_find_partition(pts):
            return False, f"partition differs from union-find ({kernels.BACKEND} kernels)"
    return True, f"{trials} random maps match union-find ({kernels.BACKEND} kernels)"


def check_mean_shift(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    h = 1.5
    centers = np.array([[10.0, 10.0, 5.0], [25.0, 10.0, 5.0]])
    pts = np.concatenate([np.round(c + rng.normal(scale=0.6, size=(30, 3))) for c in centers])
    pts = np.unique(pts, axis=0)
    probs = np.where(pts[:, 0] < 17, 0.9, 0.55)
    pmap = ProbabilityMap("t", pts * [4, 4, 1], probs, 4)
    modes = cluster_modes(pmap, np.arange(len(pts)), h)
    high = [m for m in modes if m.mean_prob > 0.75]
    ok = len(modes) == 2 and len(high) == 1 and np.linalg.norm(high[0].center - pts[probs > 0.75].mean(0)) < 0.5
    return ok, f"{len(modes)} modes, {len(high)} above 0.75"


def check_formats(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    with tempfile.TemporaryDirectory() as tmp:
        dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
        vol = Volume(dims, (0.7, 0.7, 1.25), rng.integers(-1024, 3072, size=dims[::-1]).astype(np.int16))
        write_volume(vol, Path(tmp) / "v.json")
        mask = BinaryMask(dims, rng.random(dims[::-1]) < 0.5)
        write_mask(mask, Path(tmp) / "m.json")
        model = ReCTNet(RectNetConfig(cnn="I(1),C(3,2),P,C(2,2),FC(4)", hidden=3, mlp=(5,), patch=8), seed=seed)
        save_model(model, Path(tmp) / "w.ckpt")
        back = load_model(Path(tmp) / "w.ckpt")
        ok = read_volume(Path(tmp) / "v.json") == vol
        ok &= bool(np.array_equal(read_mask(Path(tmp) / "m.json").data, mask.data))
        ok &= all(np.array_equal(a, b) for a, b in zip(model.named_params().values(), back.named_params().values()))
    return ok, "volume, mask and checkpoint round trips"


CHECKS = (("gradients", check_gradients), ("clustering", check_clustering),
          ("mean shift", check_mean_shift), ("formats", check_formats))


def run_selftest(emit=print) -> bool:
    ok_all = True
    for name, check in CHECKS:
        t = time.perf_counter()
        ok, detail = check()
        ok_all &= ok
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail} [{time.perf_counter() - t:.2f}s]")
    return ok_all
