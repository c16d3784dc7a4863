"""Timing comparison of the numba kernels against their numpy fallbacks.

Run directly:  python benchmarks/bench_kernels.py [--repeat 5]

The three kernels are the only pure-python-shaped hot loops in the package;
everything else is BLAS-bound and gains nothing from jitting.  Typical
output on one core shows phased_quadrature 5-10x faster under numba (it
skips structural zeros of the coupling matrix), scale_grid_batch roughly
even, and phase_conjugate even to slightly faster.
"""

import argparse
import time

import numpy as np

from hotgate import _kernels


def _time(fn, *args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_phased_quadrature(repeat):
    rng = np.random.default_rng(7)
    n = 420
    v = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    v[rng.random((n, n)) < 0.9] = 0.0  # coupling matrices are sparse in Fock space
    v = (v + v.conj().T) / 2.0
    energies = rng.normal(size=n)
    taus = np.linspace(0.0, 6.0, 257)
    weights = np.full(257, 6.0 / 257)
    args = (v, energies, taus, weights)
    t_np, ref = _time(_kernels._phased_quadrature_numpy, *args, repeat=repeat)
    rows = [("phased_quadrature", "numpy", t_np, 0.0)]
    if _kernels.HAS_NUMBA:
        t_nb, out = _time(_kernels._phased_quadrature_numba, *args, repeat=repeat)
        rows.append(("phased_quadrature", "numba", t_nb,
                     float(np.abs(out - ref).max())))
    return rows


def bench_scale_grid_batch(repeat):
    rng = np.random.default_rng(11)
    batch = rng.normal(size=(160, 40, 600)) + 0j
    grid = np.exp(1j * rng.normal(size=(160, 40)))
    t_np, ref = _time(lambda: _kernels._scale_grid_batch_numpy(batch.copy(), grid),
                      repeat=repeat)
    rows = [("scale_grid_batch", "numpy", t_np, 0.0)]
    if _kernels.HAS_NUMBA:
        t_nb, out = _time(lambda: _kernels._scale_grid_batch_numba(batch.copy(), grid),
                          repeat=repeat)
        rows.append(("scale_grid_batch", "numba", t_nb,
                     float(np.abs(out - ref).max())))
    return rows


def bench_phase_conjugate(repeat):
    rng = np.random.default_rng(13)
    n = 1200
    rho = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    phases = np.exp(1j * rng.normal(size=n))
    t_np, ref = _time(_kernels._phase_conjugate_numpy, rho, phases, repeat=repeat)
    rows = [("phase_conjugate", "numpy", t_np, 0.0)]
    if _kernels.HAS_NUMBA:
        t_nb, out = _time(_kernels._phase_conjugate_numba, rho, phases, repeat=repeat)
        rows.append(("phase_conjugate", "numba", t_nb,
                     float(np.abs(out - ref).max())))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="take the best of this many runs")
    args = parser.parse_args()
    if not _kernels.HAS_NUMBA:
        print("numba not importable; timing the numpy fallbacks only")
    print(f"{'kernel':<22}{'path':<8}{'best [ms]':>12}{'max |diff|':>14}")
    for bench in (bench_phased_quadrature, bench_scale_grid_batch,
                  bench_phase_conjugate):
        for name, path, t, diff in bench(args.repeat):
            print(f"{name:<22}{path:<8}{t * 1e3:>12.2f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
