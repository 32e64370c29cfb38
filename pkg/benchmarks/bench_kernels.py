"""Compiled vs pure-Python kernel timings on inputs sized like one desk volume.

Run ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import time

import numpy as np

from rectnet import _pykernels

try:
    from rectnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    grid = np.unique(rng.integers(0, 40, size=(6000, 3)), axis=0)
    blob = np.unique(np.round(rng.normal(scale=2.0, size=(400, 3)) + 20), axis=0).astype(np.float64)
    acts = rng.normal(size=(64 * 7, 8, 26, 26))
    out, arg = _pykernels.maxpool_forward(acts, 2)
    dout = rng.normal(size=out.shape)
    return [
        ("grow_regions, 6000 grid points", lambda k: k.grow_regions(grid)),
        ("mean_shift, 400-point cluster", lambda k: k.mean_shift(blob, blob, 1.5, 1.5e-3, 500)),
        ("maxpool_forward, 448x8x26x26", lambda k: k.maxpool_forward(acts, 2)),
        ("maxpool_backward, 448x8x26x26", lambda k: k.maxpool_backward(dout, arg, acts.shape, 2)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'python (s)':>11} {'compiled (s)':>13} {'speedup':>8}")
    for name, run in cases(rng):
        py = best_of(lambda: run(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<34} {py:>11.4f} {'n/a':>13} {'':>8}")
            continue
        c = best_of(lambda: run(_ckernels), args.repeat)
        print(f"{name:<34} {py:>11.4f} {c:>13.4f} {py / c:>7.1f}x")


if __name__ == "__main__":
    main()
