"""Desk-scale ground truth: dense quantum dynamics and a joint-solver oracle.

Evolution uses exact Hermitian eigendecomposition (hbar = 1, rad/us * us of
accumulated phase); a fixed-step fourth-order integrator exists purely as an
independent cross-check.  `brute_force_compile` solves every amplitude
variable and the evolution time jointly, providing the quality oracle the
two-level pipeline is compared against.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
import scipy.optimize
from scipy.stats import qmc

from .aais import AAIS, RUNTIME_FIXED
from .eqbuild import build_global_linear, extract_synthesized
from .errors import InvalidInputError, SizeLimitError
from .expr import eval_expr, value_and_gradient
from .hamiltonian import TargetHamiltonian, WeightedTerm
from .solve import MIN_SCHEDULABLE_US, PulseSchedule, ScheduleSegment
from . import report as report_mod

MAX_DENSE_QUBITS = 12

_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def build_dense(terms: Sequence[WeightedTerm], n: int) -> np.ndarray:
    """Dense 2^n x 2^n Hamiltonian from weighted Pauli strings."""
    if n > MAX_DENSE_QUBITS:
        raise SizeLimitError(f"dense verification supports at most {MAX_DENSE_QUBITS} qubits, got {n}")
    dim = 2**n
    h = np.zeros((dim, dim), dtype=complex)
    for term in terms:
        if term.string.max_qubit() >= n:
            raise InvalidInputError(
                f"term {term.string.label()} does not fit on {n} qubits"
            )
        op = np.array([[1.0 + 0.0j]])
        factors = term.string.factors
        for q in range(n):
            op = np.kron(op, _PAULI[factors[q]] if q in factors else np.eye(2, dtype=complex))
        h += term.coeff * op
    return h


def evolve(h: np.ndarray, t: float, psi0: np.ndarray) -> np.ndarray:
    """exp(-i H t) psi0 via Hermitian eigendecomposition."""
    if np.max(np.abs(h - h.conj().T)) > 1e-9:
        raise InvalidInputError("evolution requires a Hermitian Hamiltonian")
    evals, evecs = np.linalg.eigh(h)
    return evecs @ (np.exp(-1j * evals * t) * (evecs.conj().T @ psi0))


def evolve_rk4(h: np.ndarray, t: float, psi0: np.ndarray, steps: int | None = None) -> np.ndarray:
    """Independent oracle: classic fixed-step RK4 on the Schroedinger equation."""
    scale = float(np.abs(h).sum(axis=1).max())  # cheap norm upper bound
    if steps is None:
        steps = max(400, int(40 * scale * abs(t)) + 1)
    dt = t / steps
    psi = psi0.astype(complex)

    def rhs(v: np.ndarray) -> np.ndarray:
        return -1j * (h @ v)

    for _ in range(steps):
        k1 = rhs(psi)
        k2 = rhs(psi + 0.5 * dt * k1)
        k3 = rhs(psi + 0.5 * dt * k2)
        k4 = rhs(psi + dt * k3)
        psi = psi + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi / np.linalg.norm(psi)


def basis_state(n: int, which: str = "zeros") -> np.ndarray:
    dim = 2**n
    if which == "zeros":
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
        return psi
    if which == "plus":
        return np.full(dim, 1.0 / math.sqrt(dim), dtype=complex)
    raise InvalidInputError(f"unknown initial state {which!r} (expected 'zeros' or 'plus')")


def simulator_hamiltonian(aais: AAIS, values: Mapping[str, float], n: int) -> np.ndarray:
    terms = [
        WeightedTerm(eval_expr(expr, values), string)
        for instr in aais.instructions
        for expr, string in instr.effects
    ]
    return build_dense(terms, n)


def simulate_schedule(
    schedule: PulseSchedule, aais: AAIS, psi0: np.ndarray, n: int | None = None
) -> np.ndarray:
    """Apply the piecewise-constant simulator evolution the schedule encodes."""
    if n is None:
        n = aais.n_sites
    psi = psi0.astype(complex)
    for si, seg in enumerate(schedule.segments):
        h = simulator_hamiltonian(aais, schedule.assignment(si), n)
        psi = evolve(h, seg.t_machine, psi)
    return psi


def target_evolution(target, psi0: np.ndarray) -> np.ndarray:
    """Ideal evolution of a (piecewise) target, identity phase dropped."""
    from .hamiltonian import PiecewiseTarget

    psi = psi0.astype(complex)
    if isinstance(target, PiecewiseTarget):
        for i, (dur, terms) in enumerate(target.segments):
            h = build_dense(terms, target.n_qubits)
            psi = evolve(h, dur, psi)
        return psi
    h = build_dense(target.terms, target.n_qubits)
    return evolve(h, target.t_target, psi)


def fidelity(psi_a: np.ndarray, psi_b: np.ndarray) -> float:
    return float(abs(np.vdot(psi_a, psi_b)) ** 2)


def observables(psi: np.ndarray, n: int, cyclic: bool = False) -> tuple[float, float]:
    """(Z average over sites, ZZ average over adjacent pairs)."""
    probs = np.abs(psi) ** 2
    dim = len(probs)
    if dim != 2**n:
        raise InvalidInputError("state dimension does not match qubit count")
    idx = np.arange(dim)
    z_vals = np.empty((n, dim))
    for q in range(n):
        bit = (idx >> (n - 1 - q)) & 1
        z_vals[q] = 1.0 - 2.0 * bit
    z_avg = float(np.mean(z_vals @ probs))
    pairs = [(i, i + 1) for i in range(n - 1)]
    if cyclic and n > 1:
        pairs.append((n - 1, 0))
    if not pairs:
        return z_avg, 0.0
    zz = [float((z_vals[a] * z_vals[b]) @ probs) for a, b in pairs]
    return z_avg, float(np.mean(zz))


# ---------------------------------------------------------------------------
# joint brute-force compilation oracle


def brute_force_compile(
    target: TargetHamiltonian,
    aais: AAIS,
    seed: int = 0,
    starts: int = 32,
    t_max: float | None = None,
) -> tuple[PulseSchedule, "report_mod.CompilationReport"]:
    """Solve all amplitude variables and the evolution time in one shot.

    Bounded nonlinear least squares on the per-term phase-matching residuals,
    restarted from `starts` deterministic samples; returns the best schedule
    found.  Deliberately independent of the staged pipeline.
    """
    synths, inc = extract_synthesized(aais, target)
    sys = build_global_linear(synths, inc, target)
    var_ids = sorted({v for s in synths for v in s.amplitude_vars})
    if len(var_ids) + 1 > 40:
        raise InvalidInputError("brute-force oracle supports at most 40 joint unknowns")
    lo = np.array([aais.var(v).lo for v in var_ids] + [MIN_SCHEDULABLE_US])
    hi_t = t_max if t_max is not None else (aais.t_machine_max or 10.0)
    hi = np.array([aais.var(v).hi for v in var_ids] + [hi_t])
    lo_f = np.where(np.isfinite(lo), lo, -1e3)
    hi_f = np.where(np.isfinite(hi), hi, 1e3)
    b_tar = sys.rhs

    exprs = [s.defining_expr for s in synths]
    matrix = sys.matrix

    def residual(x: np.ndarray) -> np.ndarray:
        assign = dict(zip(var_ids, x[:-1]))
        t = x[-1]
        alpha = np.array([eval_expr(e, assign) for e in exprs]) * t
        return np.asarray(matrix @ alpha - b_tar)

    def jac(x: np.ndarray) -> np.ndarray:
        assign = dict(zip(var_ids, x[:-1]))
        t = x[-1]
        vals = np.empty(len(exprs))
        grads = np.zeros((len(exprs), len(var_ids) + 1))
        pos = {v: i for i, v in enumerate(var_ids)}
        for r, e in enumerate(exprs):
            v, g, _ = value_and_gradient(e, assign)
            vals[r] = v
            for name, gv in g.items():
                grads[r, pos[name]] = gv * t
            grads[r, -1] = v
        return np.asarray(matrix @ grads)

    sampler = qmc.Sobol(d=len(lo), scramble=True, seed=seed)
    points = sampler.random(starts)
    best_x, best_cost = None, math.inf
    converged = False
    for p in points:
        x0 = lo_f + p * (hi_f - lo_f)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            res = scipy.optimize.least_squares(
                residual,
                x0,
                jac=jac,
                bounds=(lo, hi),
                method="trf",
                xtol=1e-12,
                ftol=1e-12,
                gtol=1e-12,
                max_nfev=250,
            )
        if res.cost < best_cost:
            best_cost, best_x = res.cost, res.x
            converged = res.status > 0
        if math.sqrt(2 * best_cost) <= 1e-10 * max(1.0, float(np.abs(b_tar).max(initial=0.0))):
            break
    assert best_x is not None

    assign = dict(zip(var_ids, best_x[:-1]))
    t = float(best_x[-1])
    fixed = {v: float(assign[v]) for v in var_ids if aais.var(v).kind == RUNTIME_FIXED}
    dynamic = {v: float(assign[v]) for v in var_ids if aais.var(v).kind != RUNTIME_FIXED}
    for v in aais.variables:
        if v.id in assign:
            continue
        slot = fixed if v.kind == RUNTIME_FIXED else dynamic
        slot[v.id] = float(np.clip(0.0, v.lo, v.hi))
    schedule = PulseSchedule(
        fixed_values=dict(sorted(fixed.items())),
        segments=(ScheduleSegment(t, dict(sorted(dynamic.items()))),),
        aais_name=aais.name,
        metadata={"target": target.name, "unit": target.unit, "method": "joint", "converged": converged},
    )
    alpha_ach = np.array([eval_expr(e, assign) for e in exprs]) * t
    eps_joint = float(np.abs(matrix @ alpha_ach - b_tar).sum())
    rep = report_mod.build_report(
        schedule,
        sys,
        b_tar,
        eps1=eps_joint,
        eps2=[0.0],
        refinement={"applied": False, "method": "joint"},
    )
    return schedule, rep
