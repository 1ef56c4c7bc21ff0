"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Numba versions are compiled (or loaded from cache) before timing, so the
numbers are steady-state. Prints one row per kernel with the best time of
``repeat`` runs.
"""
import argparse
import timeit

import numpy as np

from delaytrack import _kernels as K


def cases(rng):
    x = rng.uniform(-1, 1, 200_000)
    tau = rng.uniform(0, 1, 200_000)
    blocks = rng.normal(size=(64, 8, 6))
    amp = rng.uniform(0.5, 2.0, 8)
    # the oracle workload: q=6 plant, 2 delays, 1536 steps (the ex5 config size)
    N, q = 1536, 6
    d = np.array([64, 128], dtype=np.int64)
    rk = (rng.normal(size=q), 0.1 * rng.normal(size=(2 * N + 1, q, q)),
          0.05 * rng.normal(size=(2, 2 * N + 1, q, q)), d, rng.normal(size=(N, 3, q)),
          rng.normal(size=(2 * 128 + 1, q)), 3.0 / N, np.zeros(N + 1, dtype=np.bool_), np.zeros((N + 1, q)))
    return {
        "cheb_table (200k x M=8)": (K.cheb_table_numpy, K.cheb_table_numba, (x, 8)),
        "locate (200k points)": (K.locate_numpy, K.locate_numba, (tau, 64, False)),
        "reconstruct (200k points, 6 ch)": (K.reconstruct_numpy, K.reconstruct_numba, (blocks, tau, 64, amp, False)),
        "rk4_delay (q=6, 1536 steps)": (K.rk4_delay_numpy, K.rk4_delay_numba, rk),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, (np_fn, nb_fn, a) in cases(rng).items():
        nb_fn(*a)  # compile / load cache
        t_np = min(timeit.repeat(lambda: np_fn(*a), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: nb_fn(*a), number=1, repeat=args.repeat))
        print(f"{name:34s} {t_np * 1e3:8.2f}ms {t_nb * 1e3:8.2f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
