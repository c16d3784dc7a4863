"""Figures of merit: branch separation curves, channel fidelity and purity,
and the anharmonic dephasing budget.

The channel tools are deliberately small: everything is phrased through the
Choi matrix J = sum_ij |i><j| (x) Lambda(|i><j|), because the gate simulator
already produces one (gate_protocol.GateChannel) and every quantity we report
(entanglement fidelity, average fidelity, purity, trace preservation,
complete positivity) is a short contraction of J.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels, fock_core, gate_protocol
from .errors import NonConvergenceError
from .trap_model import (
    AnharmonicExpansion,
    ModeBasis,
    TrapSpec,
    anharmonic_expansion,
    build_mode_basis,
    mode_energies,
    motional_energies_flat,
    motional_hamiltonian,
    relative_occupation,
    v_cor_operator,
)

# ---------------------------------------------------------------------------
# branch separation of ion 1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeparationCurve:
    """Sampled distance between the two kicked branches of ion 1."""

    times: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    dims: tuple[int, int]
    x0: float
    converged: bool

    @property
    def max_error(self) -> float:
        return float(np.abs(self.analytic - self.numeric).max())


def separation_analytic(basis: ModeBasis, times) -> np.ndarray:
    """Branch separation d(t) = 2*x0*eta*[sin(nu_c t) - sin(2 nu_c t)/2].

    Follows from the coherent displacements +-i*eta_c, -+i*eta_r of the kick
    and ion 1's position x1 = x_c + (x_r + x_e)/2; the maximum
    D = (3*sqrt(3)/2)*x0*eta sits at t0 = 2*pi/(3*nu_c).
    """
    t = np.asarray(times, dtype=float)
    w = basis.nu_c
    return 2.0 * basis.x0 * basis.eta * (np.sin(w * t) - 0.5 * np.sin(2.0 * w * t))


def _mean_x_kicked(alpha: complex, width: float, nu: float, dim: int, times):
    """<x(t)> of a single mode prepared in the coherent state |alpha>."""
    ket = fock_core.coherent_state(alpha, dim).amplitudes
    x_op = fock_core.position_operator(dim, width)
    phases = np.exp(-1j * nu * (np.arange(dim) + 0.5)[None, :] * np.asarray(times)[:, None])
    kets = phases * ket[None, :]
    return np.einsum("tj,jk,tk->t", kets.conj(), x_op, kets).real


def separation_numeric(basis: ModeBasis, times, dims: tuple[int, int] | None = None):
    """Branch separation from direct Fock-space evolution at the given dims."""
    n_c, n_r = dims if dims is not None else basis.dims
    eta_c, eta_r = basis.eta_c, basis.eta_r
    d_c = _mean_x_kicked(1j * eta_c, basis.width_c, basis.nu_c, n_c, times) \
        - _mean_x_kicked(-1j * eta_c, basis.width_c, basis.nu_c, n_c, times)
    d_r = _mean_x_kicked(-1j * eta_r, basis.width_r, basis.nu_r, n_r, times) \
        - _mean_x_kicked(1j * eta_r, basis.width_r, basis.nu_r, n_r, times)
    # x1 = x_c + (x_r + x_e)/2; the constant x_e/2 cancels in the difference
    return d_c + d_r / 2.0


def separation_scan(
    basis: ModeBasis,
    n_points: int = 64,
    dims: tuple[int, int] | None = None,
    check_tol: float = 1e-9,
) -> SeparationCurve:
    """Sample one gate period of the separation, analytic against numeric.

    The numeric route is recomputed at doubled truncation; `converged` records
    whether the two truncations agree to check_tol * x0 everywhere.
    """
    if n_points < 2:
        raise ValueError("need at least two sample points")
    times = np.linspace(0.0, basis.gate_time, n_points)
    n_c, n_r = dims if dims is not None else basis.dims
    num = separation_numeric(basis, times, (n_c, n_r))
    num2 = separation_numeric(basis, times, (2 * n_c, 2 * n_r))
    converged = bool(np.abs(num - num2).max() <= check_tol * basis.x0)
    return SeparationCurve(
        times=times, analytic=separation_analytic(basis, times), numeric=num2,
        dims=(n_c, n_r), x0=basis.x0, converged=converged,
    )


# ---------------------------------------------------------------------------
# quantum channels on the two-qubit internal space
# ---------------------------------------------------------------------------


def _col_vec(op: np.ndarray) -> np.ndarray:
    """vec with the same index convention as the Choi assembly: sum_i |i> (x) K|i>."""
    return np.ascontiguousarray(op.T).reshape(-1)


@dataclass
class QuantumChannel:
    """Completely positive map stored as its Choi matrix."""

    choi: np.ndarray

    def __post_init__(self):
        self.choi = np.asarray(self.choi, dtype=complex)
        d2 = self.choi.shape[0]
        d = int(round(math.sqrt(d2)))
        if self.choi.shape != (d2, d2) or d * d != d2:
            raise ValueError("choi matrix must be square with square dimension")
        self.dim = d

    @classmethod
    def from_unitary(cls, u: np.ndarray) -> "QuantumChannel":
        v = _col_vec(np.asarray(u, dtype=complex))
        return cls(np.outer(v, v.conj()))

    @classmethod
    def from_kraus(cls, kraus) -> "QuantumChannel":
        vs = [_col_vec(np.asarray(k, dtype=complex)) for k in kraus]
        choi = sum(np.outer(v, v.conj()) for v in vs)
        return cls(choi)

    @classmethod
    def depolarizing(cls, p: float, dim: int = 4) -> "QuantumChannel":
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        ident = cls.from_unitary(np.eye(dim, dtype=complex))
        return cls((1.0 - p) * ident.choi + (p / dim) * np.eye(dim * dim, dtype=complex))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        d = self.dim
        j4 = self.choi.reshape(d, d, d, d)  # [in, out, in', out']
        return np.einsum("iajb,ij->ab", j4, np.asarray(rho, dtype=complex))

    def compose(self, other: "QuantumChannel") -> "QuantumChannel":
        """self after other (matrix-product order)."""
        d = other.dim
        choi = np.zeros((d * d, d * d), dtype=complex)
        j4 = choi.reshape(d, d, d, d)
        for i in range(d):
            for j in range(d):
                e = np.zeros((d, d), dtype=complex)
                e[i, j] = 1.0
                j4[i, :, j, :] = self.apply(other.apply(e))
        return QuantumChannel(choi)

    def trace_preservation_defect(self) -> float:
        d = self.dim
        tr_out = np.einsum("iaja->ij", self.choi.reshape(d, d, d, d))
        return float(np.abs(tr_out - np.eye(d)).max())

    def is_trace_preserving(self, tol: float = 1e-9) -> bool:
        return self.trace_preservation_defect() <= tol

    def is_completely_positive(self, tol: float = 1e-9) -> bool:
        evals = np.linalg.eigvalsh((self.choi + self.choi.conj().T) / 2.0)
        return bool(evals.min() >= -tol)


def average_fidelity(channel: QuantumChannel, target: np.ndarray) -> float:
    """Average gate fidelity of the channel against a target unitary.

    Uses F_ent = <v_U| J |v_U> / d^2 with v_U = vec(U), then the standard
    d-dimensional conversion F_avg = (d*F_ent + 1)/(d + 1).
    """
    d = channel.dim
    target = np.asarray(target, dtype=complex)
    if target.shape != (d, d):
        raise ValueError("target unitary has the wrong dimension")
    v = _col_vec(target)
    f_ent = (v.conj() @ channel.choi @ v).real / (d * d)
    return float((d * f_ent + 1.0) / (d + 1.0))


_QUBIT_FRAME = [
    np.array([1.0, 0.0], dtype=complex),
    np.array([0.0, 1.0], dtype=complex),
    np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0),
    np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0),
    np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2.0),
    np.array([1.0, -1.0j], dtype=complex) / math.sqrt(2.0),
]


def frame_states(dim: int = 4):
    """Product kets over the six single-qubit axis states, 36 in total."""
    if dim != 4:
        raise ValueError("frame states are defined for the two-qubit space")
    return [np.kron(a, b) for a in _QUBIT_FRAME for b in _QUBIT_FRAME]


def average_purity(channel: QuantumChannel) -> float:
    """Mean output purity Tr[Lambda(rho)^2] over the 36 axis product states."""
    total = 0.0
    states = frame_states(channel.dim)
    for ket in states:
        out = channel.apply(np.outer(ket, ket.conj()))
        total += np.einsum("ab,ba->", out, out).real
    return float(total / len(states))


# ---------------------------------------------------------------------------
# anharmonic dephasing
# ---------------------------------------------------------------------------


def _simpson(n_intervals: int, length: float):
    """Nodes and weights of composite Simpson over [0, length]."""
    if n_intervals < 2 or n_intervals % 2:
        raise ValueError("Simpson needs an even, positive interval count")
    taus = np.linspace(0.0, length, n_intervals + 1)
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return taus, w * (length / n_intervals / 3.0)


def interaction_integral(
    v: np.ndarray, energies: np.ndarray, length: float, n_intervals: int
) -> np.ndarray:
    """integral_0^length of e^{i H0 tau} V e^{-i H0 tau} d tau for diagonal H0."""
    taus, weights = _simpson(n_intervals, length)
    return _kernels.phased_quadrature(
        np.asarray(v, dtype=complex), np.asarray(energies, dtype=float),
        taus, weights.astype(float))


def _branch_displacement_factors(basis: ModeBasis):
    d_c = fock_core.displacement(1j * basis.eta_c, basis.dims[0])
    d_r = fock_core.displacement(-1j * basis.eta_r, basis.dims[1])
    return d_c, d_r


def _conjugate_factored(op: np.ndarray, d_c: np.ndarray, d_r: np.ndarray) -> np.ndarray:
    """(d_c (x) d_r)^dag  op  (d_c (x) d_r) without forming the kron."""
    n_c = d_c.shape[0]
    n_r = d_r.shape[0]
    t = op.reshape(n_c, n_r, n_c, n_r)
    t = np.tensordot(d_c.conj().T, t, axes=([1], [0]))          # a <- i
    t = np.tensordot(d_r.conj().T, t, axes=([1], [1]))          # b <- j
    t = t.transpose(1, 0, 2, 3)
    t = np.tensordot(t, d_c, axes=([2], [0]))                   # k -> c
    t = np.tensordot(t, d_r, axes=([2], [0]))                   # l -> d
    return t.reshape(n_c * n_r, n_c * n_r)


def _thermal_grid_probs(basis: ModeBasis, n_bar_c: float) -> np.ndarray:
    p_c = fock_core.thermal_probabilities(n_bar_c, basis.dims[0])
    p_r = fock_core.thermal_probabilities(relative_occupation(n_bar_c), basis.dims[1])
    return np.kron(p_c, p_r)


def _phase_variance(tilde_v: np.ndarray, probs: np.ndarray):
    mean = float(np.real(probs @ np.diag(tilde_v)))
    second = float(np.einsum("j,jk->", probs, np.abs(tilde_v) ** 2))
    return second - mean * mean, mean


@dataclass(frozen=True)
class AnharmonicReport:
    """Perturbative dephasing estimate for one operating point."""

    f_cor: float
    variance: float
    mean_phase: float
    points: int
    converged: bool
    dims: tuple[int, int]
    state_mode: str
    order: int

    def to_dict(self) -> dict:
        return {
            "f_cor": self.f_cor,
            "phase_variance": self.variance,
            "mean_phase": self.mean_phase,
            "quadrature_intervals": self.points,
            "converged": self.converged,
            "dims": list(self.dims),
            "state_mode": self.state_mode,
            "order": self.order,
        }


def anharmonic_fidelity(
    basis: ModeBasis,
    expansion: AnharmonicExpansion,
    n_bar_c: float = 0.0,
    points: int = 256,
    state_mode: str = "pre_kick",
    qtol: float = 1e-8,
    max_doublings: int = 3,
) -> AnharmonicReport:
    """Fidelity reduction from the anharmonic correction, to leading order.

    Integrates the correction in the interaction picture over one gate time
    and reports F_cor = 1 - Var(phase) over the thermal ensemble, where the
    variance is <W^2> - <W>^2 of the integrated phase operator W.  state_mode
    'pre_kick' (default) evaluates over the undisplaced thermal state;
    'post_kick' conjugates W with the opening-kick displacement first, which
    probes the branch geometry but needs kick-sized truncations.

    The Simpson interval count doubles until two successive values of the
    variance agree to qtol; `converged` reports whether that happened within
    max_doublings rounds (0 rounds means no check was performed).
    """
    if state_mode not in ("pre_kick", "post_kick"):
        raise ValueError(f"unknown state_mode {state_mode!r}")
    energies = motional_energies_flat(basis)
    v = v_cor_operator(expansion, basis)
    probs = _thermal_grid_probs(basis, n_bar_c)
    if state_mode == "post_kick":
        d_c, d_r = _branch_displacement_factors(basis)

    def variance_at(n_intervals):
        tilde = interaction_integral(v, energies, basis.gate_time, n_intervals)
        if state_mode == "post_kick":
            tilde = _conjugate_factored(tilde, d_c, d_r)
        return _phase_variance(tilde, probs)

    var, mean = variance_at(points)
    converged = False
    n = points
    for _ in range(max_doublings):
        n *= 2
        var2, mean2 = variance_at(n)
        if abs(var2 - var) <= qtol * max(1.0, abs(var2)):
            var, mean = var2, mean2
            converged = True
            break
        var, mean = var2, mean2
    return AnharmonicReport(
        f_cor=1.0 - var, variance=var, mean_phase=mean, points=n,
        converged=converged, dims=basis.dims, state_mode=state_mode,
        order=expansion.order,
    )


def exact_anharmonic_fidelity(
    basis: ModeBasis,
    expansion: AnharmonicExpansion,
    n_bar_c: float = 0.0,
    state_mode: str = "pre_kick",
) -> float:
    """Non-perturbative cross-check of anharmonic_fidelity.

    Propagates each thermal ensemble member through one gate period of the
    full motional hamiltonian and averages the survival overlaps
    |<psi(0)| e^{+i H0 t_g} e^{-i (H0 + V) t_g} |psi(0)>|^2.  The harmonic
    reference factor is a global phase per member (every mode completes whole
    periods at t_g), so this is the plain return overlap of the perturbed
    evolution; it agrees with the perturbative estimate through second order
    in the correction.
    """
    if state_mode not in ("pre_kick", "post_kick"):
        raise ValueError(f"unknown state_mode {state_mode!r}")
    energies = motional_energies_flat(basis)
    h_full = motional_hamiltonian(basis, v_cor_operator(expansion, basis))
    u_full = fock_core.hermitian_expm(h_full, basis.gate_time)
    echo = np.exp(1j * energies * basis.gate_time)[:, None] * u_full
    if state_mode == "post_kick":
        d_c, d_r = _branch_displacement_factors(basis)
        echo = _conjugate_factored(echo, d_c, d_r)
    probs = _thermal_grid_probs(basis, n_bar_c)
    return float(probs @ (np.abs(np.diag(echo)) ** 2))


# ---------------------------------------------------------------------------
# operating-point reports and parameter scans
# ---------------------------------------------------------------------------


@dataclass
class GateReport:
    """One operating point of the gate, with its figures of merit."""

    eta: float
    n_bar_c: float
    n_bar_r: float
    fidelity: float
    purity: float
    f_cor: float | None
    dims: tuple[int, int]
    kept: tuple[int, int]
    dropped_mass: float
    condition: "gate_protocol.ConditionReport"
    tp_defect: float
    flip_mode: str

    def to_dict(self) -> dict:
        out = {
            "eta": self.eta,
            "n_bar_c": self.n_bar_c,
            "n_bar_r": self.n_bar_r,
            "fidelity": self.fidelity,
            "purity": self.purity,
            "f_cor": self.f_cor,
            "dims": list(self.dims),
            "kept_levels": list(self.kept),
            "dropped_mass": self.dropped_mass,
            "tp_defect": self.tp_defect,
            "flip_mode": self.flip_mode,
        }
        out["conditions"] = self.condition.to_dict()
        return out


def _anharmonic_point(spec, n_bar_c, order, points=256):
    """F_cor at thermal-sized truncation (the correction needs no kick room)."""
    n_bar_r = relative_occupation(n_bar_c)
    dims = (fock_core.default_fock_dim(n_bar_c, 0.0),
            fock_core.default_fock_dim(n_bar_r, 0.0))
    small = build_mode_basis(spec, eta=spec.lamb_dicke, n_bar_c=n_bar_c, dims=dims)
    expansion = anharmonic_expansion(spec, order=order)
    return anharmonic_fidelity(small, expansion, n_bar_c=n_bar_c, points=points)


def gate_report(
    spec: TrapSpec,
    eta: float,
    n_bar_c: float,
    rabi_cycles: int = 3,
    margin: float = 3.0,
    flip_mode: str = "gaussian",
    anharmonic_order: int | None = 3,
    dims: tuple[int, int] | None = None,
    mass_cutoff: float = 1e-10,
    omega0_scale: float = 1.0,
    frame_phase: float | None = None,
    target: np.ndarray | None = None,
) -> GateReport:
    """Simulate one operating point and collect its figures of merit.

    omega0_scale rescales the solved pulse amplitude (0 turns the flip off),
    frame_phase overrides the schedule's closing frame rotation, and target
    replaces the conditional-flip unitary in the fidelity (for instance the
    identity, when the pulse is disabled).  anharmonic_order None skips the
    dephasing estimate; 0 reports F_cor = 1 (correction switched off).
    """
    basis = build_mode_basis(spec, eta=eta, n_bar_c=n_bar_c, dims=dims)
    schedule, condition = gate_protocol.build_schedule(
        basis, n_bar_c=n_bar_c, rabi_cycles=rabi_cycles, margin=margin)
    if omega0_scale != 1.0:
        if omega0_scale < 0:
            raise ValueError("omega0_scale must be non-negative")
        schedule = replace(schedule, flip=replace(
            schedule.flip, omega0=schedule.flip.omega0 * omega0_scale))
    if frame_phase is not None:
        schedule = replace(schedule, frame_phase=frame_phase)
    gc = gate_protocol.gate_channel(
        basis, schedule, n_bar_c=n_bar_c, flip_mode=flip_mode,
        mass_cutoff=mass_cutoff)
    channel = QuantumChannel(gc.choi)
    if target is None:
        target = gate_protocol.ideal_gate()
    fidelity = average_fidelity(channel, target)
    purity = average_purity(channel)
    if anharmonic_order is None:
        f_cor = None
    elif anharmonic_order == 0:
        f_cor = 1.0
    else:
        f_cor = _anharmonic_point(spec, n_bar_c, anharmonic_order).f_cor
    return GateReport(
        eta=eta, n_bar_c=n_bar_c, n_bar_r=relative_occupation(n_bar_c),
        fidelity=fidelity, purity=purity, f_cor=f_cor,
        dims=basis.dims, kept=gc.kept, dropped_mass=gc.dropped_mass,
        condition=condition, tp_defect=channel.trace_preservation_defect(),
        flip_mode=flip_mode,
    )


def _scan_worker(payload):
    spec, eta, n_bar_c, kw = payload
    row = {"eta": eta, "n_bar_c": n_bar_c, "fidelity": math.nan,
           "purity": math.nan, "f_cor": math.nan, "error": None}
    try:
        rep = gate_report(spec, eta, n_bar_c, **kw)
        row.update(fidelity=rep.fidelity, purity=rep.purity,
                   f_cor=math.nan if rep.f_cor is None else rep.f_cor)
    except Exception as exc:  # scans keep going; the row records the failure
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def scan(
    spec: TrapSpec,
    points,
    jobs: int = 1,
    **report_kw,
) -> list[dict]:
    """Evaluate gate_report on a list of (eta, n_bar_c) operating points.

    Rows come back in input order.  A failing point keeps its row, with nan
    figures and the error string attached, so partial scans stay usable.
    """
    payloads = [(spec, float(e), float(nb), report_kw) for e, nb in points]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_scan_worker, payloads))
    return [_scan_worker(p) for p in payloads]
