"""Time the diffusion and pooled recursions on the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads the on-disk cache); it is excluded.
"""

import argparse
import time

import numpy as np

from netisac import _accel, kernels
from netisac.topology import build_random_network, metropolis_weights


def problem(N, K, T, seed=0):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((N, T)) + 1j * rng.standard_normal((N, T))
    U = (rng.standard_normal((N, T, K)) + 1j * rng.standard_normal((N, T, K))) / np.sqrt(2 * K)
    C = metropolis_weights(build_random_network(N, min(3, N - 1), seed))
    return Y, U, C


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAS_NUMBA:
        print("numba not installed; only the numpy backend is available")
    sizes = [(5, 8, 600), (20, 64, 600), (20, 64, 3000)]
    print(f"{'case':<22}{'numpy s':>10}{'numba s':>10}{'speedup':>9}")
    for N, K, T in sizes:
        Y, U, C = problem(N, K, T)
        mu = np.full(N, 0.05)
        X0 = np.zeros((N, K), complex)
        K1 = 2 if K == 8 else 4
        for name, run in (
            ("atc", lambda b: kernels.atc_recursion(Y, U, C, mu, 0.01, 0.01, K1, X0, backend=b)),
            ("pooled", lambda b: kernels.pooled_recursion(Y, U, 0.05, 0.01, 0.01, K1, X0[0], backend=b)),
        ):
            t_np = best_of(lambda: run("numpy"), args.repeat)
            if _accel.HAS_NUMBA:
                run("numba")                      # warm-up / compile
                t_nb = best_of(lambda: run("numba"), args.repeat)
                print(f"{name} N={N} K={K} T={T}".ljust(22) + f"{t_np:10.4f}{t_nb:10.4f}{t_np / t_nb:9.1f}")
            else:
                print(f"{name} N={N} K={K} T={T}".ljust(22) + f"{t_np:10.4f}{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
