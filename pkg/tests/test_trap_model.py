"""Trap statics, normal modes, and the anharmonic Taylor remainder.

The analytic expansion coefficients and mode frequencies are checked against
finite differences of total_potential, which knows nothing about the Taylor
bookkeeping: it just evaluates K|x1|^p + K|x2|^p + C/(x1-x2) in mode
coordinates.
"""

import math

import numpy as np
import pytest

from hotgate import fock_core, trap_model as tm
from hotgate.errors import InfeasibleRatioError


# --- finite-difference helpers ---------------------------------------------

_STENCILS = {
    1: ((1, 0.5), (-1, -0.5)),
    2: ((1, 1.0), (0, -2.0), (-1, 1.0)),
    3: ((2, 0.5), (1, -1.0), (-1, 1.0), (-2, -0.5)),
    4: ((2, 1.0), (1, -4.0), (0, 6.0), (-1, -4.0), (-2, 1.0)),
}


def _mixed_partial(f, a: int, b: int, h: float) -> float:
    """Central-difference d^a/dx_c^a d^b/dx_r^b f at the origin, O(h^2)."""
    sc = _STENCILS[a] if a else ((0, 1.0),)
    sr = _STENCILS[b] if b else ((0, 1.0),)
    total = 0.0
    for ic, wc in sc:
        for ir, wr in sr:
            total += wc * wr * f(ic * h, ir * h)
    return total / h ** (a + b)


@pytest.fixture(scope="module")
def spec():
    return tm.TrapSpec.normalized(lamb_dicke=0.45)


# --- statics ----------------------------------------------------------------


def test_equilibrium_harmonic_closed_form():
    # p=2, K=1/2, C=1, m=1: balance gives s^3 = 2
    s = tm.TrapSpec(exponent=2.0, stiffness=0.5, coulomb=1.0)
    assert tm.equilibrium_separation(s) == pytest.approx(2.0 ** (1 / 3), rel=1e-12)


def test_equilibrium_coulomb_scaling():
    # x_e scales as C^(1/(p+1)) for the power-law well
    p = 5.0 / 3.0
    s1 = tm.TrapSpec(exponent=p, stiffness=0.8, coulomb=1.0)
    s2 = tm.TrapSpec(exponent=p, stiffness=0.8, coulomb=2.0)
    ratio = tm.equilibrium_separation(s2) / tm.equilibrium_separation(s1)
    assert ratio == pytest.approx(2.0 ** (1.0 / (p + 1.0)), rel=1e-10)


def test_equilibrium_zeroes_the_gradient(spec):
    x_e = tm.equilibrium_separation(spec)

    def f(xc, xr):
        return tm.total_potential(spec, xc, xr, x_e)

    scale = abs(f(0.0, 0.0))
    h = 1e-3 * x_e
    assert abs(_mixed_partial(f, 0, 1, h)) * h < 1e-9 * scale
    assert abs(_mixed_partial(f, 1, 0, h)) * h < 1e-9 * scale


def test_spec_validation():
    with pytest.raises(ValueError):
        tm.TrapSpec(exponent=1.0)
    with pytest.raises(ValueError):
        tm.TrapSpec(exponent=2.0, stiffness=-1.0)
    with pytest.raises(ValueError):
        tm.TrapSpec(exponent=2.0, lamb_dicke=-0.1)


def test_normalized_spec_hits_targets(spec):
    nu_c, _ = tm.mode_frequencies(spec)
    assert nu_c == pytest.approx(1.0, rel=1e-10)
    x0 = 1.0 / math.sqrt(2.0 * spec.mass * nu_c)
    assert tm.equilibrium_separation(spec) / x0 == pytest.approx(820.0, rel=1e-9)


# --- normal modes -----------------------------------------------------------


@pytest.mark.parametrize("p", [1.2, 5.0 / 3.0, 2.0, 3.0])
def test_mode_frequencies_match_fd_hessian(p):
    s = tm.TrapSpec(exponent=p, stiffness=0.8, coulomb=1.3, mass=1.7)
    x_e = tm.equilibrium_separation(s)

    def f(xc, xr):
        return tm.total_potential(s, xc, xr, x_e)

    h = 1e-4 * x_e
    m_c, m_r = 2.0 * s.mass, s.mass / 2.0
    nu_c_fd = math.sqrt(_mixed_partial(f, 2, 0, h) / m_c)
    nu_r_fd = math.sqrt(_mixed_partial(f, 0, 2, h) / m_r)
    nu_c, nu_r = tm.mode_frequencies(s)
    assert nu_c == pytest.approx(nu_c_fd, rel=1e-6)
    assert nu_r == pytest.approx(nu_r_fd, rel=1e-6)
    # the two modes decouple at quadratic order
    cross = _mixed_partial(f, 1, 1, h)
    assert abs(cross) < 1e-6 * m_c * nu_c**2


@pytest.mark.parametrize("p,expected", [
    (5.0 / 3.0, 2.0),
    (2.0, math.sqrt(3.0)),
    (3.0, math.sqrt(2.0)),
])
def test_frequency_ratio_formula(p, expected):
    # ratio sqrt((p+1)/(p-1)), independent of K, C, m
    s = tm.TrapSpec(exponent=p, stiffness=0.37, coulomb=2.1, mass=0.9)
    assert tm.frequency_ratio(s) == pytest.approx(expected, rel=1e-9)


def test_solve_exponent_round_trips():
    assert tm.solve_exponent_for_ratio(2.0) == pytest.approx(5.0 / 3.0, abs=1e-9)
    assert tm.solve_exponent_for_ratio(math.sqrt(3.0)) == pytest.approx(2.0, abs=1e-9)


def test_solve_exponent_rejects_unreachable_ratio():
    with pytest.raises(InfeasibleRatioError):
        tm.solve_exponent_for_ratio(1.0001)
    with pytest.raises(InfeasibleRatioError):
        tm.solve_exponent_for_ratio(1e6)


def test_relative_occupation_is_bose_at_double_frequency():
    # same temperature, stretch mode at twice the COM frequency
    beta = 0.7
    n_c = 1.0 / math.expm1(beta)
    n_r = 1.0 / math.expm1(2.0 * beta)
    assert tm.relative_occupation(n_c) == pytest.approx(n_r, rel=1e-12)


def test_relative_occupation_rational_points():
    assert tm.relative_occupation(0.0) == 0.0
    assert tm.relative_occupation(1.0) == pytest.approx(1.0 / 3.0, rel=1e-15)
    assert tm.relative_occupation(3.0) == pytest.approx(9.0 / 7.0, rel=1e-15)


# --- quantized basis --------------------------------------------------------


def test_mode_basis_geometry(spec):
    basis = tm.build_mode_basis(spec, eta=0.45)
    assert basis.commensurate
    assert basis.nu_r == 2.0 * basis.nu_c  # snapped, not approximately
    assert basis.width_c == pytest.approx(basis.x0 / math.sqrt(2.0), rel=1e-14)
    assert basis.width_r == pytest.approx(basis.x0, rel=1e-12)
    assert basis.eta_c == pytest.approx(0.45 / math.sqrt(2.0), rel=1e-12)
    assert basis.eta_r == pytest.approx(0.45 / 2.0, rel=1e-12)
    assert basis.gate_time * basis.nu_c == pytest.approx(2.0 * math.pi)
    assert basis.flip_time * 3.0 == pytest.approx(basis.gate_time)
    assert basis.wavenumber == pytest.approx(0.45 / basis.x0, rel=1e-14)


def test_mode_basis_noncommensurate_not_snapped():
    s = tm.TrapSpec(exponent=2.0, stiffness=0.5, coulomb=1.0)
    basis = tm.build_mode_basis(s, eta=0.3)
    assert not basis.commensurate
    assert basis.nu_r / basis.nu_c == pytest.approx(math.sqrt(3.0), rel=1e-9)


def test_mode_basis_default_dims_track_occupation(spec):
    cold = tm.build_mode_basis(spec, eta=2.0, n_bar_c=0.0)
    hot = tm.build_mode_basis(spec, eta=2.0, n_bar_c=3.0)
    assert hot.dims[0] > cold.dims[0]
    assert hot.dims[1] > cold.dims[1]
    resized = cold.with_dims((12, 7))
    assert resized.dims == (12, 7)
    assert resized.nu_c == cold.nu_c


def test_mode_energies_ladder(spec):
    basis = tm.build_mode_basis(spec, eta=0.1, dims=(4, 3))
    e_c, e_r = tm.mode_energies(basis)
    np.testing.assert_allclose(e_c, basis.nu_c * np.array([0.5, 1.5, 2.5, 3.5]))
    np.testing.assert_allclose(e_r, basis.nu_r * np.array([0.5, 1.5, 2.5]))
    flat = tm.motional_energies_flat(basis)
    assert flat.shape == (12,)
    assert flat[0] == pytest.approx(0.5 * basis.nu_c + 0.5 * basis.nu_r)


# --- anharmonic expansion ---------------------------------------------------


def test_expansion_against_finite_differences(spec):
    """Every cubic and quartic coefficient against FD mixed partials."""
    x_e = tm.equilibrium_separation(spec)
    exp4 = tm.anharmonic_expansion(spec, order=4, x_e=x_e)

    def f(xc, xr):
        return tm.total_potential(spec, xc, xr, x_e)

    h = 2.0  # x_e ~ 5.8e2 here, so this sits well inside the convergence zone
    for (a, b), coeff in exp4.coefficients.items():
        fd = _mixed_partial(f, a, b, h) / (math.factorial(a) * math.factorial(b))
        assert coeff == pytest.approx(fd, rel=2e-4), (a, b)


def test_expansion_structure(spec):
    exp6 = tm.anharmonic_expansion(spec, order=6)
    degrees = {a + b for a, b in exp6.coefficients}
    assert degrees == {3, 4, 5, 6}
    # mirror symmetry of the two wells kills every odd power of x_c
    assert all(a % 2 == 0 for a, _ in exp6.coefficients)
    assert (2, 1) in exp6.coefficients
    assert (0, 3) in exp6.coefficients
    assert (4, 2) in exp6.coefficients
    with pytest.raises(ValueError):
        tm.anharmonic_expansion(spec, order=2)
    with pytest.raises(ValueError):
        tm.anharmonic_expansion(spec, order=7)


def test_expansion_scaling(spec):
    exp3 = tm.anharmonic_expansion(spec, order=3)
    doubled = exp3.scaled(2.0)
    for key, val in exp3.coefficients.items():
        assert doubled.coefficients[key] == 2.0 * val
    assert doubled.x_e == exp3.x_e


def test_v_cor_operator_matches_manual_kron(spec):
    basis = tm.build_mode_basis(spec, eta=0.45, dims=(6, 5))
    expansion = tm.AnharmonicExpansion(
        order=3, coefficients={(0, 3): 2.0, (2, 1): -0.5}, x_e=basis.x_e)
    v = tm.v_cor_operator(expansion, basis)
    x_c = fock_core.position_operator(6, basis.width_c)
    x_r = fock_core.position_operator(5, basis.width_r)
    manual = 2.0 * np.kron(np.eye(6), np.linalg.matrix_power(x_r, 3)) \
        - 0.5 * np.kron(x_c @ x_c, x_r)
    manual = (manual + manual.conj().T) / 2.0
    np.testing.assert_allclose(v, manual, atol=1e-12)
    np.testing.assert_allclose(v, v.conj().T, atol=0)


def test_motional_hamiltonian_diagonal_harmonic(spec):
    basis = tm.build_mode_basis(spec, eta=0.1, dims=(3, 2))
    h = tm.motional_hamiltonian(basis)
    np.testing.assert_allclose(h, np.diag(tm.motional_energies_flat(basis)), atol=0)
