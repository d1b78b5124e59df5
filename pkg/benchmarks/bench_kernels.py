"""Benchmark the numba kernels against the pure-numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--quick]

Times the hot paths on both backends (after a warm-up call so numba's
compilation is excluded) and prints a comparison table.  ``--quick`` runs
smaller problem sizes.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rmsplit import rng
from rmsplit.kernels import get


def timeit(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()

    T_env = 256 if args.quick else 1024
    T_mass = 1024 if args.quick else 8192
    T_coupled = 256 if args.quick else 2048
    n_walks = 100_000 if args.quick else 1_000_000
    n_reps = 8 if args.quick else 32

    key = rng.env_key(1, 0)
    cks = np.array([T_mass], dtype=np.int64)
    cases = []

    env_nb = get("numba").build_env(key, 12, True, -24, 24)

    cases.append((f"build_env T={T_env}",
                  lambda K: K.build_env(key, T_env, True, -2 * T_env, 2 * T_env)))
    cases.append((f"mass_sweep_stream T={T_mass}",
                  lambda K: K.mass_sweep_stream(key, T_mass, True, cks)))
    keys = get("numba").derive_env_keys(1, 0, n_reps)
    ck2 = np.array([T_coupled], dtype=np.int64)
    cases.append((f"coupled_ensemble x{n_reps} T={T_coupled}",
                  lambda K: K.coupled_ensemble_stream(keys, T_coupled, True, ck2)))
    cases.append((f"walk_terminal_hist x{n_walks} t=12",
                  lambda K: K.walk_terminal_hist(*env_nb, key, 12, n_walks, 0,
                                                 np.zeros(0, np.int64))))
    tkeys = get("numba").derive_env_keys(1, 0, 4 * n_reps)
    cases.append((f"single_walk_tau x{4 * n_reps} tmax=400",
                  lambda K: K.single_walk_tau(tkeys, 400, True)))
    lk = rng.stream_out(rng.root_key(2), rng.DOM_LAZY)
    lck = np.array([4096], dtype=np.int64)
    cases.append(("lazy_ensemble x20000 n=4096",
                  lambda K: K.lazy_ensemble(lk, 20_000, 4096, lck)))

    backends = {}
    for name in ("numba", "numpy"):
        try:
            backends[name] = get(name)
        except ImportError:
            print(f"(backend {name} unavailable)")

    print(f"{'kernel':<38}" + "".join(f"{n:>12}" for n in backends) + "   speedup")
    for label, fn in cases:
        times = {}
        for name, K in backends.items():
            fn(K)  # warm-up (JIT compile / cache load)
            times[name] = timeit(lambda: fn(K))
        row = f"{label:<38}" + "".join(f"{times[n]:>11.3f}s" for n in backends)
        if len(times) == 2:
            row += f"   {times['numpy'] / times['numba']:>6.1f}x"
        print(row)


if __name__ == "__main__":
    main()
