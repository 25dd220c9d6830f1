"""Time the numba and numpy density kernels on the same batch of tails.

    python3 benchmarks/bench_kernels.py --k 10,50 --rows 200
"""
import argparse
import time

import numpy as np

from sfatail._kernels import log_density_matrix_numba, log_density_matrix_numpy
from sfatail.evt_core import DEFAULT_QUADRATURE, sample_normalized
from sfatail.tail_tests import DEFAULT_GRID


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", default="10,20,50,100")
    ap.add_argument("--rows", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    q = DEFAULT_QUADRATURE
    xis = np.ascontiguousarray(DEFAULT_GRID.points, dtype=np.float64)
    opts = (q.rtol, q.atol, q.max_subdivisions, q.xi_zero)
    rng = np.random.default_rng(args.seed)
    print(f"{'k':>5} {'rows':>6} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max |diff|':>11}")
    for k in (int(x) for x in args.k.split(",")):
        V = np.ascontiguousarray(sample_normalized(0.3, k, rng, args.rows))
        log_density_matrix_numba(V[:1], xis, *opts)  # compile outside the timer
        t_nb, a = best_of(lambda: log_density_matrix_numba(V, xis, *opts), args.repeat)
        t_np, b = best_of(lambda: log_density_matrix_numpy(V, xis, *opts), args.repeat)
        print(f"{k:>5} {args.rows:>6} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>8.1f} "
              f"{np.max(np.abs(a - b)):>11.2e}")


if __name__ == "__main__":
    main()
