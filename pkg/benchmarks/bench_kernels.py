"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--scale 1]

Each kernel is checked for identical output first, then timed with the
first (compiling) numba call excluded. Sizes roughly match evaluating one
category of a mid-sized catalog.
"""

import argparse
import time

import numpy as np

from alcir import kernels
from alcir._accel import NUMBA_AVAILABLE


def _time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def cases(scale, rng):
    q, n, d = 256 * scale, 2000 * scale, 32
    queries = rng.standard_normal((q, d))
    cands = rng.standard_normal((n, d))
    norms = np.sqrt((cands * cands).sum(axis=1))
    scores = np.round(rng.standard_normal((q, n)), 2)  # rounded so ties occur
    targets = rng.integers(0, n, size=q)
    codes = rng.integers(0, n, size=50_000 * scale)
    prices = np.sort(np.round(rng.lognormal(3.0, 0.8, size=100_000 * scale), 1))
    return [
        ("cosine_scores", (queries, cands, norms)),
        ("target_ranks", (scores, targets)),
        ("top_k", (scores[0].copy(), 10)),
        ("tally", (codes, n)),
        ("equal_depth_chunks", (prices, 20)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--scale", type=int, default=1)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':20s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a in cases(args.scale, rng):
        f_np = getattr(kernels, name + "_np")
        f_nb = getattr(kernels, name + "_nb")
        ref, got = f_np(*a), f_nb(*a)  # also triggers compilation
        if not np.allclose(ref, got, rtol=0, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        t_np = _time(f_np, a, args.repeat)
        t_nb = _time(f_nb, a, args.repeat)
        print(f"{name:20s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
