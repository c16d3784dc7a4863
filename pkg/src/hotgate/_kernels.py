"""Numerical inner-loop kernels.

Most of the package's runtime lives in BLAS/LAPACK calls, which numba cannot
improve on.  Two loops are genuinely hot and pure-python-shaped, so they get
@njit versions here:

* accumulating the interaction-picture quadrature of the anharmonic correction
  (a dense matrix scaled by per-element phases, summed over quadrature nodes),
* applying diagonal free-evolution phases to batches of mode-grid vectors and
  to density matrices.

Setting HOTGATE_NO_NUMBA=1 (or any non-empty value) selects the pure-numpy
fallbacks; the same happens automatically when numba is not importable.
`bench_kernels.py` under benchmarks/ times both paths.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on stripped installs
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not os.environ.get("HOTGATE_NO_NUMBA")


def _phased_quadrature_numpy(v, energies, taus, weights):
    out = np.zeros_like(v)
    delta = energies[:, None] - energies[None, :]
    for tau, w in zip(taus, weights):
        out += w * np.exp(1j * delta * tau) * v
    return out


def _phase_conjugate_numpy(rho, phases):
    return rho * np.outer(phases, phases.conj())


def _scale_grid_batch_numpy(batch, grid):
    batch *= grid[:, :, None]
    return batch


if HAS_NUMBA:

    @njit(cache=True)
    def _phased_quadrature_numba(v, energies, taus, weights):  # pragma: no cover
        n = v.shape[0]
        out = np.zeros_like(v)
        for j in range(n):
            for k in range(n):
                if v[j, k] == 0:
                    continue
                d = energies[j] - energies[k]
                acc = 0.0 + 0.0j
                for q in range(taus.shape[0]):
                    acc += weights[q] * np.exp(1j * d * taus[q])
                out[j, k] = acc * v[j, k]
        return out

    @njit(cache=True)
    def _phase_conjugate_numba(rho, phases):  # pragma: no cover
        n = rho.shape[0]
        out = np.empty_like(rho)
        for j in range(n):
            for k in range(n):
                out[j, k] = rho[j, k] * phases[j] * np.conj(phases[k])
        return out

    @njit(cache=True)
    def _scale_grid_batch_numba(batch, grid):  # pragma: no cover
        nc, nr, nk = batch.shape
        for a in range(nc):
            for b in range(nr):
                g = grid[a, b]
                for k in range(nk):
                    batch[a, b, k] *= g
        return batch


def phased_quadrature(v, energies, taus, weights):
    """Sum_q w_q * exp(i*(E_j - E_k)*tau_q) * v_jk, dense over (j, k)."""
    v = np.ascontiguousarray(v, dtype=complex)
    energies = np.ascontiguousarray(energies, dtype=float)
    taus = np.ascontiguousarray(taus, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    if USE_NUMBA:
        return _phased_quadrature_numba(v, energies, taus, weights)
    return _phased_quadrature_numpy(v, energies, taus, weights)


def phase_conjugate(rho, phases):
    """diag(phases) @ rho @ diag(phases)^dagger without forming the diagonals."""
    rho = np.asarray(rho, dtype=complex)
    phases = np.ascontiguousarray(phases, dtype=complex)
    if USE_NUMBA:
        return _phase_conjugate_numba(np.ascontiguousarray(rho), phases)
    return _phase_conjugate_numpy(rho, phases)


def scale_grid_batch(batch, grid):
    """In-place multiply a (n_c, n_r, k) batch by a (n_c, n_r) grid of factors."""
    if USE_NUMBA:
        return _scale_grid_batch_numba(batch, np.ascontiguousarray(grid, dtype=complex))
    return _scale_grid_batch_numpy(batch, np.asarray(grid, dtype=complex))
