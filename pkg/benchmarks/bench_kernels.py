"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes match a desk-scale run: 2e4 paths, 50 steps, 21-point control grids.
Numba compile time is excluded by a warm-up call.
"""
import argparse
import timeit

import numpy as np

from drgame.kernels import _numba_impl as nb
from drgame.kernels import _numpy_impl as npi


def cases(rng):
    M, N, K = 20_000, 50, 21
    H = rng.normal(size=(M, K, K))
    A, B = rng.normal(size=(M, K)), rng.normal(size=(M, K))
    settle = (rng.normal(size=(M, N)), rng.uniform(size=(M, N + 1)) < 0.02,
              rng.uniform(size=(M, N + 1)) < 0.02, rng.normal(size=(M, N + 1)) + 1,
              rng.normal(size=(M, N + 1)) - 1, rng.normal(size=M), 1.0 / N)
    return {
        "minimax (full table)": ("minimax", (H,)),
        "split_minimax": ("split_minimax", (A, B)),
        "settle_payoffs": ("settle_payoffs", settle),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for label, (name, data) in cases(rng).items():
        f_np, f_nb = getattr(npi, name), getattr(nb, name)
        f_nb(*data)  # compile
        t_np = min(timeit.repeat(lambda: f_np(*data), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*data), number=1, repeat=args.repeat))
        agree = all(np.array_equal(a, b) for a, b in zip(f_np(*data), f_nb(*data)))
        print(f"{label:<22}{t_np * 1e3:10.2f}{t_nb * 1e3:10.2f}{t_np / t_nb:8.1f}x  {agree}")


if __name__ == "__main__":
    main()
