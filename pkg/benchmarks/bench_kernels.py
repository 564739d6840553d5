"""Numba vs numpy kernels, plus an end-to-end permutation test in each mode.

    python benchmarks/bench_kernels.py [--reps 5] [--skip-e2e]

The kernel timings call both flavours directly in one process. The
end-to-end numbers run a DEAA permutation test in two subprocesses, one with
AABAUDIT_DISABLE_NUMBA=1, and check the p-values agree exactly.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from aabaudit._accel import HAS_NUMBA
from aabaudit.kernels import (_midranks_numba, _midranks_numpy, _subset_sums_numba,
                              _subset_sums_numpy)

E2E = """
import json, time
from aabaudit._accel import USE_NUMBA
from aabaudit.significance import permutation_test_deaa
from aabaudit.synthetic import PlantedConfig, generate_planted_space
ps = generate_planted_space(PlantedConfig(dim=128, n_E=2000, n_P=2000, seed=1,
                                          e_alignment=0.1, p_alignment=0.0, noise_sigma=1.0))
g = ps.groups
permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], ps.space, n_perm=1000, seed=0)  # warm-up
t = time.perf_counter()
r = permutation_test_deaa(g["E"], g["P"], g["A"], g["B"], ps.space, n_perm=10_000, seed=0)
print(json.dumps({"numba": USE_NUMBA, "seconds": time.perf_counter() - t, "p": r.p_value}))
"""


def best_of(fn, reps):
    return min(timeit.repeat(fn, number=1, repeat=reps))


def kernel_rows(reps):
    rng = np.random.default_rng(0)
    rows = []
    for n, k, m, draws in [(400, 200, 1, 1000), (4000, 2000, 1, 1000), (4000, 2000, 3, 1000)]:
        values = rng.normal(size=(n, m))
        u = rng.random((draws, k))
        a = _subset_sums_numba(values, k, u)  # compiles
        b = _subset_sums_numpy(values, k, u)
        rows.append((f"subset_sums n={n} k={k} m={m} x{draws}",
                     best_of(lambda: _subset_sums_numba(values, k, u), reps),
                     best_of(lambda: _subset_sums_numpy(values, k, u), reps),
                     np.array_equal(a, b)))
    for n in (10_000, 1_000_000):
        x = np.round(rng.normal(size=n), 2)  # plenty of ties
        a = _midranks_numba(x)
        b = _midranks_numpy(x)
        rows.append((f"midranks n={n}",
                     best_of(lambda: _midranks_numba(x), reps),
                     best_of(lambda: _midranks_numpy(x), reps),
                     np.array_equal(a[0], b[0]) and a[1] == b[1]))
    return rows


def end_to_end():
    out = []
    for disable in ("0", "1"):
        env = dict(os.environ, AABAUDIT_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", E2E], env=env, check=True,
                             capture_output=True, text=True)
        out.append(json.loads(res.stdout))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'kernel':<42} {'numba s':>9} {'numpy s':>9} {'speedup':>8}  identical")
    for name, tn, tp, same in kernel_rows(args.reps):
        print(f"{name:<42} {tn:9.4f} {tp:9.4f} {tp / tn:8.1f}x  {same}")
    if not args.skip_e2e:
        fast, slow = end_to_end()
        print("\nDEAA permutation test, 4000 entities, 10,000 permutations:")
        print(f"  numba {fast['seconds']:.2f} s, numpy {slow['seconds']:.2f} s, "
              f"p-values equal: {fast['p'] == slow['p']}")


if __name__ == "__main__":
    main()
