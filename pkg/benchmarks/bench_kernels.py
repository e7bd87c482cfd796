"""Time the compiled counting kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--rows 20000] [--reps 2500] [--repeat 5]

Prints the best wall time per kernel and backend and the speedup.
"""
import argparse
import time

import numpy as np

from llmfeat import _kernels_py as py

try:
    from llmfeat import _kernels as cy
except ImportError:
    cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rows, reps, seed):
    rng = np.random.default_rng(seed)
    n_attrs, card, k = 16, 8, 3
    codes = rng.integers(-1, card, size=(rows, n_attrs))
    target = rng.integers(0, k, size=rows)
    subset = np.sort(rng.choice(rows, rows // 2, replace=False))
    attrs = np.arange(n_attrs)

    n = min(rows, 2000)
    f, t = rng.integers(0, 5, n), rng.integers(0, 3, n)
    idx = rng.integers(0, n, size=(reps, n))
    counts = py.bootstrap_counts(f, t, idx, 5, 3)
    return {
        "extension_tally": lambda m: m.extension_tally(subset, codes, attrs, card, target, k),
        "bootstrap_counts": lambda m: m.bootstrap_counts(f, t, idx, 5, 3),
        "chi2_batch": lambda m: m.chi2_batch(counts),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=20000)
    p.add_argument("--reps", type=int, default=2500)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if cy is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'kernel':<18} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, call in cases(args.rows, args.reps, args.seed).items():
        t_py = best_of(lambda: call(py), args.repeat)
        if cy is None:
            print(f"{name:<18} {t_py * 1e3:>10.2f} {'-':>10} {'-':>8}")
            continue
        t_cy = best_of(lambda: call(cy), args.repeat)
        print(f"{name:<18} {t_py * 1e3:>10.2f} {t_cy * 1e3:>10.2f} {t_py / t_cy:>7.2f}x")


if __name__ == "__main__":
    main()
