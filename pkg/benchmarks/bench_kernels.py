#!/usr/bin/env python3
"""Benchmark the jitted kernels against the pure-numpy fallback.

Runs each hot kernel through both implementations and prints timing plus the
agreement between paths. The installed package picks its path from the
MTSAVG_NO_NUMBA environment variable; this script calls both directly.
"""

import time

import numpy as np

from mtsavg import _kernels
from mtsavg._kernels import (USING_NUMBA, evolve_adaptive_py, evolve_fixed_py,
                             expm_herm_py, qp_eval_py)


def make_problem(seed=7, N=4, J=8):
    rng = np.random.default_rng(seed)
    amps = (rng.standard_normal((J, N, N)) + 1j * rng.standard_normal((J, N, N)))
    amps /= np.linalg.norm(amps, axis=(1, 2), keepdims=True) * 2
    omegas = rng.uniform(0.05, 5.0, J)
    return amps, omegas


def timeit(fn, *args, repeat=3):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    amps, omegas = make_problem()
    beta = 1e-3
    print(f"numba available and active in package: {USING_NUMBA}")
    if not USING_NUMBA:
        print("(package runs the numpy path; jitted timings below use numba directly)")

    rows = []

    # single evaluation
    t_np, a_np = timeit(lambda: qp_eval_py(amps, omegas, 1.234))
    if USING_NUMBA:
        _kernels.qp_eval(amps, omegas, 0.0)  # compile
        t_nb, a_nb = timeit(lambda: _kernels.qp_eval(amps, omegas, 1.234))
        rows.append(("generator eval", t_np, t_nb, np.linalg.norm(a_np - a_nb)))

    # hermitian exponential
    H = qp_eval_py(amps, omegas, 0.3)
    t_np, u_np = timeit(lambda: expm_herm_py(H, 0.7))
    if USING_NUMBA:
        t_nb, u_nb = timeit(lambda: _kernels.expm_herm(H, 0.7))
        rows.append(("hermitian exp", t_np, t_nb, np.linalg.norm(u_np - u_nb)))

    # fixed-step evolution, 20k steps
    args = (amps, omegas, beta, 0.0, 1000.0, 20000)
    t_np, u_np = timeit(evolve_fixed_py, *args, repeat=1)
    if USING_NUMBA:
        _kernels.evolve_fixed(amps, omegas, beta, 0.0, 1.0, 2)
        t_nb, u_nb = timeit(_kernels.evolve_fixed, *args, repeat=1)
        rows.append(("fixed-step evolve (20k)", t_np, t_nb,
                     np.linalg.norm(u_np - u_nb)))

    # adaptive evolution to t = 1/beta
    args = (amps, omegas, beta, 0.0, 1.0 / beta, 1e-9, 0.1, 10_000_000)
    t_np, r_np = timeit(evolve_adaptive_py, *args, repeat=1)
    if USING_NUMBA:
        _kernels.evolve_adaptive(amps, omegas, beta, 0.0, 1.0, 1e-9, 0.1, 1000)
        t_nb, r_nb = timeit(_kernels.evolve_adaptive, *args, repeat=1)
        rows.append((f"adaptive evolve to 1/beta ({r_nb[2]} steps)",
                     t_np, t_nb, np.linalg.norm(r_np[0] - r_nb[0])))

    if rows:
        print(f"{'kernel':<34} {'numpy':>10} {'numba':>10} {'speedup':>8} {'|diff|':>10}")
        for name, t_np, t_nb, diff in rows:
            print(f"{name:<34} {t_np:>9.4f}s {t_nb:>9.4f}s {t_np / t_nb:>7.1f}x {diff:>10.2e}")
    else:
        t_np, r_np_ = timeit(evolve_adaptive_py, *args, repeat=1)
        print(f"numpy adaptive evolve to 1/beta: {t_np:.3f}s ({r_np_[2]} steps)")


if __name__ == "__main__":
    main()
