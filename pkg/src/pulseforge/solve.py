"""Compilation pipeline: linear solve, time optimization, variable resolution.

Stages, in order: least-squares solve of the global linear system for
synthesized targets; per-component minimum evolution time from time-critical
variable bounds; overall time = bottleneck maximum; runtime-fixed variables
by bounded nonlinear least squares with step-wise time relaxation when
geometry constraints bind; exact re-resolution of dynamic variables at the
final time; optional one-shot refinement that shifts dynamic targets to
cancel fixed-variable error.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg
from scipy.stats import qmc

from .aais import AAIS, RUNTIME_DYNAMIC, RUNTIME_FIXED, AmplitudeVariable, GeometryConstraints
from .eqbuild import (
    GlobalLinearSystem,
    LocalSystem,
    SynthesizedVariable,
    build_global_linear,
    connected_components,
    extract_synthesized,
)
from .errors import (
    CompilerError,
    InfeasibleError,
    NumericalFailureError,
    SchedulingInfeasibleError,
)
from .expr import AbsDiff, Const, Expr, Power, Product, Var, eval_expr, value_and_gradient
from .hamiltonian import PiecewiseTarget, TargetHamiltonian, target_vector
from . import report as report_mod

log = logging.getLogger("pulseforge")

#: shortest duration a device can execute; used when every target is zero
MIN_SCHEDULABLE_US = 0.01

#: dense least-squares cutoff; larger systems go through LSMR
_DENSE_LSTSQ_LIMIT = 250_000


@dataclass(frozen=True)
class CompileOptions:
    seed: int = 0
    refine: bool = True
    refine_l1: bool = False
    dt_step: float | None = None
    emit: frozenset[str] = frozenset()
    share_groups_enforced: bool = False
    multistarts: int = 8


@dataclass(frozen=True)
class LinearSolution:
    alpha_star: np.ndarray
    residual_l1: float


@dataclass(frozen=True)
class LocalSolution:
    """Solved values for one component at its minimum (or final) time."""

    component_id: int
    values: dict[str, float]
    t_min: float
    residual_l1: float
    # homogeneous reduction state: time-critical value x time, enabling exact
    # re-resolution at any t >= t_min
    tc_var: str | None = None
    u: float | None = None


@dataclass(frozen=True)
class ScheduleSegment:
    t_machine: float
    dynamic_values: dict[str, float]


@dataclass(frozen=True)
class PulseSchedule:
    fixed_values: dict[str, float]
    segments: tuple[ScheduleSegment, ...]
    aais_name: str = ""
    metadata: dict = field(default_factory=dict)

    def total_time(self) -> float:
        return sum(s.t_machine for s in self.segments)

    def assignment(self, segment: int) -> dict[str, float]:
        out = dict(self.fixed_values)
        out.update(self.segments[segment].dynamic_values)
        return out


# ---------------------------------------------------------------------------
# global linear solve


def solve_global_linear(sys: GlobalLinearSystem) -> LinearSolution:
    """Minimum-norm least-squares solution of M alpha = B_tar."""
    m, n = sys.matrix.shape
    if n == 0:
        return LinearSolution(np.zeros(0), float(np.abs(sys.rhs).sum()))
    if m * n <= _DENSE_LSTSQ_LIMIT:
        alpha, *_ = scipy.linalg.lstsq(sys.matrix.toarray(), sys.rhs, lapack_driver="gelsd")
    else:
        alpha = scipy.sparse.linalg.lsmr(
            sys.matrix, sys.rhs, atol=1e-13, btol=1e-13, conlim=1e12, maxiter=8 * (m + n)
        )[0]
    residual = float(np.abs(sys.matrix @ alpha - sys.rhs).sum())
    return LinearSolution(np.asarray(alpha, dtype=float), residual)


# ---------------------------------------------------------------------------
# residual systems over a component's variables


class _ResidualSystem:
    """Vector map x -> [f_k(x)] for one component, with Jacobian.

    A vectorized fast path handles the ubiquitous pair-power shape
    c * |x_a - x_b|^k; everything else goes through the exact recursive
    evaluator expression by expression.
    """

    def __init__(self, exprs: Sequence[Expr], var_order: Sequence[str], pinned: Mapping[str, float] | None = None):
        self.exprs = list(exprs)
        self.var_order = list(var_order)
        self.pos = {v: i for i, v in enumerate(self.var_order)}
        self.pinned = dict(pinned or {})
        self._pattern = self._detect_pair_power()

    def _detect_pair_power(self):
        ia, ib, cs, ks = [], [], [], []
        for e in self.exprs:
            if isinstance(e, Product) and len(e.children) == 2 and isinstance(e.children[0], Const):
                const, core = e.children[0].value, e.children[1]
            else:
                const, core = 1.0, e
            if not (
                isinstance(core, Power)
                and isinstance(core.base, AbsDiff)
                and isinstance(core.base.a, Var)
                and isinstance(core.base.b, Var)
                and core.base.a.name in self.pos
                and core.base.b.name in self.pos
            ):
                return None
            ia.append(self.pos[core.base.a.name])
            ib.append(self.pos[core.base.b.name])
            cs.append(const)
            ks.append(core.exponent)
        return (
            np.array(ia, dtype=int),
            np.array(ib, dtype=int),
            np.array(cs, dtype=float),
            np.array(ks, dtype=float),
        )

    def values(self, x: np.ndarray) -> np.ndarray:
        if self._pattern is not None:
            ia, ib, cs, ks = self._pattern
            d = np.abs(x[ia] - x[ib])
            d = np.maximum(d, 1e-12)  # numeric guard at coincident positions
            return cs * d**ks
        assign = dict(self.pinned)
        assign.update({v: x[i] for v, i in self.pos.items()})
        return np.array([eval_expr(e, assign) for e in self.exprs])

    def jacobian(self, x: np.ndarray):
        n_rows, n_cols = len(self.exprs), len(self.var_order)
        if self._pattern is not None:
            ia, ib, cs, ks = self._pattern
            diff = x[ia] - x[ib]
            d = np.maximum(np.abs(diff), 1e-12)
            dfdd = cs * ks * d ** (ks - 1.0) * np.sign(diff + (diff == 0.0))
            if n_rows * n_cols > 20_000:
                rows = np.repeat(np.arange(n_rows), 2)
                cols = np.stack([ia, ib], axis=1).ravel()
                vals = np.stack([dfdd, -dfdd], axis=1).ravel()
                return sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
            jac = np.zeros((n_rows, n_cols))
            jac[np.arange(n_rows), ia] += dfdd
            jac[np.arange(n_rows), ib] -= dfdd
            return jac
        assign = dict(self.pinned)
        assign.update({v: x[i] for v, i in self.pos.items()})
        jac = np.zeros((n_rows, n_cols))
        for r, e in enumerate(self.exprs):
            _, grad, _ = value_and_gradient(e, assign)
            for v, g in grad.items():
                if v in self.pos:
                    jac[r, self.pos[v]] = g
        return jac


def _bounds_arrays(var_order: Sequence[str], aais: AAIS) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([aais.var(v).lo for v in var_order])
    hi = np.array([aais.var(v).hi for v in var_order])
    return lo, hi


def _sample_starts(
    lo: np.ndarray, hi: np.ndarray, n: int, seed: int
) -> list[np.ndarray]:
    if len(lo) == 0:
        return [np.zeros(0)]
    flo = np.where(np.isfinite(lo), lo, -1e3)
    fhi = np.where(np.isfinite(hi), hi, 1e3)
    sampler = qmc.Sobol(d=len(lo), scramble=True, seed=seed)
    n = max(n, 1)
    pts = sampler.random_base2(m=max(1, math.ceil(math.log2(n))))[:n]
    return [flo + p * (fhi - flo) for p in pts]


def _nls(
    system: _ResidualSystem,
    targets: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    starts: Sequence[np.ndarray],
    max_nfev: int = 400,
) -> tuple[np.ndarray, float]:
    """Best bounded least-squares fit of f(x) = targets over the given starts.

    Returns (x, l2 residual norm).  Degenerate equal-bound variables are
    pinned rather than passed to the optimizer.
    """
    free = lo < hi
    pinned_vals = np.where(free, 0.0, lo)

    def resid(xf: np.ndarray) -> np.ndarray:
        x = pinned_vals.copy()
        x[free] = xf
        return system.values(x) - targets

    def jac(xf: np.ndarray):
        x = pinned_vals.copy()
        x[free] = xf
        full = system.jacobian(x)
        return full[:, free] if not sp.issparse(full) else full.tocsc()[:, np.nonzero(free)[0]]

    if not free.any():
        x = pinned_vals
        return x, float(np.linalg.norm(system.values(x) - targets))

    try:
        sparse_jac = sp.issparse(system.jacobian(np.clip(np.zeros(len(lo)), lo, hi)))
    except CompilerError:
        sparse_jac = False
    best_x, best_cost = None, math.inf
    scale = max(1.0, float(np.max(np.abs(targets))) if len(targets) else 1.0)
    for start in starts:
        x0 = np.clip(np.asarray(start, dtype=float), lo, hi)[free]
        try:
            # errstate: the trust-region internals divide by vanishing
            # curvature on degenerate steps and recover on their own
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                res = scipy.optimize.least_squares(
                    resid,
                    x0,
                    jac=jac,
                    bounds=(lo[free], hi[free]),
                    method="trf",
                    xtol=1e-12,
                    ftol=1e-12,
                    gtol=1e-12,
                    max_nfev=max_nfev,
                    tr_solver="lsmr" if sparse_jac else "exact",
                )
        except Exception as exc:  # pragma: no cover - scipy internal failures
            log.warning("least-squares start failed: %s", exc)
            continue
        if res.cost < best_cost:
            best_cost = res.cost
            best_x = res.x
            if math.sqrt(2 * best_cost) <= 1e-11 * scale:
                break
    if best_x is None:
        raise NumericalFailureError("all least-squares starts failed")
    x = pinned_vals.copy()
    x[free] = best_x
    return x, float(np.linalg.norm(system.values(x) - targets))


# ---------------------------------------------------------------------------
# dynamic components: minimum time and re-resolution


def _is_time_homogeneous(
    system: _ResidualSystem, tc_index: int, lo: np.ndarray, hi: np.ndarray, seed: int
) -> bool:
    """Check f(..., v, ...) == v * f(..., 1, ...) for the time-critical slot."""
    rng = np.random.default_rng(seed)
    flo = np.where(np.isfinite(lo), lo, -10.0)
    fhi = np.where(np.isfinite(hi), hi, 10.0)
    for _ in range(3):
        x = flo + rng.random(len(flo)) * (fhi - flo)
        xv = x.copy()
        xv[tc_index] = 1.0
        base = system.values(xv)
        for s in (0.0, 0.37, -1.4):
            xs = x.copy()
            xs[tc_index] = s
            got = system.values(xs)
            if not np.allclose(got, s * base, rtol=1e-9, atol=1e-12):
                return False
    return True


def _min_time_for_u(u: float, var: AmplitudeVariable) -> float:
    """Shortest time t with u/t inside the variable's bounds."""
    if u == 0.0:
        return 0.0
    if u > 0:
        if var.hi <= 0:
            raise InfeasibleError(
                f"variable {var.id} needs a positive value but its bounds are ({var.lo}, {var.hi})"
            )
        return u / var.hi
    if var.lo >= 0:
        raise InfeasibleError(
            f"variable {var.id} needs a negative value but its bounds are ({var.lo}, {var.hi})"
        )
    return u / var.lo


def _solve_homogeneous(
    system: _ResidualSystem,
    targets: np.ndarray,
    tc_index: int,
    lo: np.ndarray,
    hi: np.ndarray,
    tc: AmplitudeVariable,
    seed: int,
    multistarts: int,
) -> tuple[float, np.ndarray, float, float]:
    """Absorb v*t into one unknown u and solve u*g(w) = targets.

    Returns (u, full variable vector with the companion values and the
    time-critical slot set to 1, l2 residual of u*g(w) - targets, and the
    residual penalty attributable to the sign restriction on u).  The sign of
    u is restricted to signs the variable can realize; a nonzero penalty at
    the optimum means the targets need the forbidden sign.
    """
    sign_lo = -math.inf if tc.lo < 0 else 0.0
    sign_hi = math.inf if tc.hi > 0 else 0.0

    comp_mask = np.ones(len(lo), dtype=bool)
    comp_mask[tc_index] = False

    def u_free(g: np.ndarray) -> float:
        denom = float(g @ g)
        if denom < 1e-300:
            return 0.0
        return float((g @ targets) / denom)

    def u_of(g: np.ndarray) -> float:
        return float(np.clip(u_free(g), sign_lo, sign_hi))

    def full_x(w: np.ndarray) -> np.ndarray:
        x = np.empty(len(lo))
        x[comp_mask] = w
        x[tc_index] = 1.0
        return x

    if not comp_mask.any():
        g = system.values(full_x(np.zeros(0)))
        u = u_of(g)
        resid = float(np.linalg.norm(u * g - targets))
        penalty = resid - float(np.linalg.norm(u_free(g) * g - targets))
        return u, full_x(np.zeros(0)), resid, penalty

    def resid_w(w: np.ndarray) -> np.ndarray:
        g = system.values(full_x(w))
        return u_of(g) * g - targets

    lo_w, hi_w = lo[comp_mask], hi[comp_mask]
    flo = np.where(np.isfinite(lo_w), lo_w, -1e3)
    fhi = np.where(np.isfinite(hi_w), hi_w, 1e3)
    starts = [np.clip(np.zeros(len(lo_w)), flo, fhi)]
    starts += _sample_starts(lo_w, hi_w, multistarts - 1, seed)
    scale = max(1.0, float(np.max(np.abs(targets))) if len(targets) else 1.0)

    best: tuple[float, float, np.ndarray] | None = None  # (cost, |u|, w)
    for s in starts:
        pinned = lo_w >= hi_w
        if pinned.any():
            s = np.where(pinned, lo_w, s)
        free = ~pinned

        def resid_free(wf: np.ndarray) -> np.ndarray:
            w = np.where(pinned, lo_w, 0.0)
            w[free] = wf
            return resid_w(w)

        if free.any():
            with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                res = scipy.optimize.least_squares(
                    resid_free,
                    np.clip(s, flo, fhi)[free],
                    bounds=(lo_w[free], hi_w[free]),
                    method="trf",
                    xtol=1e-13,
                    ftol=1e-13,
                    gtol=1e-13,
                    max_nfev=300,
                )
            w = np.where(pinned, lo_w, 0.0)
            w[free] = res.x
            cost = float(np.linalg.norm(resid_w(w)))
        else:
            w = lo_w.copy()
            cost = float(np.linalg.norm(resid_w(w)))
        u = u_of(system.values(full_x(w)))
        cand = (cost, abs(u), w)
        if best is None or cand[0] < best[0] * (1 - 1e-12) - 1e-30 or (
            cand[0] <= best[0] * (1 + 1e-9) + 1e-30 and cand[1] < best[1] - 1e-15
        ):
            best = cand
        if best[0] <= 1e-12 * scale and best == cand:
            break
    assert best is not None
    _, _, w = best
    x = full_x(w)
    g = system.values(x)
    u = u_of(g)
    resid = float(np.linalg.norm(u * g - targets))
    penalty = resid - float(np.linalg.norm(u_free(g) * g - targets))
    return u, x, resid, penalty


def _min_time_bisect(
    system: _ResidualSystem,
    targets: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    seed: int,
    multistarts: int,
) -> tuple[float, np.ndarray, float]:
    """Minimize t subject to f(x) = targets/t: bisection with feasibility NLS."""
    norm_t = float(np.abs(targets).sum())
    if norm_t == 0.0:
        starts = _sample_starts(lo, hi, 1, seed)
        x, resid = _nls(system, targets, lo, hi, starts)
        return 0.0, x, resid

    def attempt(t: float) -> tuple[np.ndarray, float]:
        starts = _sample_starts(lo, hi, multistarts, seed)
        return _nls(system, targets / t, lo, hi, starts, max_nfev=200)

    def feasible(t: float) -> tuple[bool, np.ndarray, float]:
        x, resid = attempt(t)
        tol = 1e-7 * max(1.0, norm_t / t)
        return resid <= tol, x, resid

    t_hi = 1.0
    ok, x_hi, r_hi = feasible(t_hi)
    doublings = 0
    while not ok and doublings < 40:
        t_hi *= 2.0
        ok, x_hi, r_hi = feasible(t_hi)
        doublings += 1
    if not ok:
        # no exact solution at any time; report the best approximate fit
        log.warning("component targets not exactly reachable; returning best fit at t=%g", t_hi)
        return t_hi, x_hi, r_hi * t_hi
    t_lo = t_hi / 2.0
    while t_lo > 1e-9:
        ok_lo, x_lo, _ = feasible(t_lo)
        if not ok_lo:
            break
        t_hi, x_hi = t_lo, x_lo
        t_lo /= 2.0
    else:
        t_lo = 0.0
    for _ in range(60):
        if t_hi - t_lo <= 1e-9 * t_hi:
            break
        mid = 0.5 * (t_lo + t_hi)
        ok_m, x_m, _ = feasible(mid)
        if ok_m:
            t_hi, x_hi = mid, x_m
        else:
            t_lo = mid
    resid = float(np.linalg.norm(system.values(x_hi) - targets / t_hi)) * t_hi
    return t_hi, x_hi, resid


def local_min_time(
    local: LocalSystem,
    alpha_star: np.ndarray,
    sys: GlobalLinearSystem,
    aais: AAIS,
    seed: int = 0,
    multistarts: int = 8,
) -> LocalSolution:
    """Per-component shortest evolution time and values achieving it.

    Case 1/2 (single time-critical variable scaling the amplitudes): absorb
    v*t into one unknown, solve the reduced system, divide by the binding
    bound.  Case 3 (no time-critical variable) and components where the
    time-critical variable enters non-homogeneously: bisection on t with
    bounded least-squares feasibility checks.
    """
    if local.has_fixed_vars:
        raise ValueError("fixed-variable components are solved by solve_fixed_vars")
    targets = local.targets(alpha_star)
    var_order = sorted(local.amplitude_vars)
    exprs = [sys.synth_vars[j].defining_expr for j in local.synth_indices]
    system = _ResidualSystem(exprs, var_order)
    lo, hi = _bounds_arrays(var_order, aais)
    comp_seed = (seed * 1000003 + local.component_id * 97 + 13) & 0x7FFFFFFF

    tc_id = local.time_critical_var
    if tc_id is not None and len(local.time_critical_vars) == 1:
        tc_index = var_order.index(tc_id)
        if _is_time_homogeneous(system, tc_index, lo, hi, comp_seed):
            tc = aais.var(tc_id)
            u, x_unit, resid, sign_penalty = _solve_homogeneous(
                system, targets, tc_index, lo, hi, tc, comp_seed, multistarts
            )
            scale = max(1.0, float(np.max(np.abs(targets))) if len(targets) else 1.0)
            if sign_penalty > 1e-9 * scale:
                raise InfeasibleError(
                    f"component {local.component_id}: targets need {tc_id} on the far side "
                    f"of its bounds ({tc.lo}, {tc.hi})"
                )
            try:
                t_min = _min_time_for_u(u, tc)
            except InfeasibleError as exc:
                raise InfeasibleError(f"component {local.component_id}: {exc}") from None
            values = {v: float(x_unit[i]) for i, v in enumerate(var_order)}
            if t_min > 0:
                values[tc_id] = u / t_min
            else:
                values[tc_id] = 0.0 if tc.lo <= 0.0 <= tc.hi else tc.lo
            return LocalSolution(
                local.component_id, values, t_min, resid, tc_var=tc_id, u=u
            )

    t_min, x, resid = _min_time_bisect(system, targets, lo, hi, comp_seed, multistarts)
    values = {v: float(x[i]) for i, v in enumerate(var_order)}
    return LocalSolution(local.component_id, values, t_min, resid)


def choose_t_sim(locals_: Sequence[LocalSolution]) -> float:
    """Bottleneck rule: the largest per-component minimum time."""
    t = max((s.t_min for s in locals_), default=0.0)
    if t <= 0.0:
        return MIN_SCHEDULABLE_US
    return t


def resolve_dynamic(
    local: LocalSystem,
    minsol: LocalSolution,
    alpha_star: np.ndarray,
    t_sim: float,
    sys: GlobalLinearSystem,
    aais: AAIS,
    seed: int = 0,
) -> LocalSolution:
    """Re-solve a dynamic component at the chosen overall time.

    For the homogeneous reduction this is exact: the time-critical value is
    u / t_sim and companions are unchanged.
    """
    var_order = sorted(local.amplitude_vars)
    exprs = [sys.synth_vars[j].defining_expr for j in local.synth_indices]
    system = _ResidualSystem(exprs, var_order)
    targets = local.targets(alpha_star)

    if minsol.tc_var is not None and minsol.u is not None:
        values = dict(minsol.values)
        tc = aais.var(minsol.tc_var)
        v = minsol.u / t_sim
        if not (tc.lo - 1e-9 <= v <= tc.hi + 1e-9):
            raise InfeasibleError(
                f"component {local.component_id}: resolved {tc.id}={v:.6g} exceeds bounds "
                f"({tc.lo}, {tc.hi}) at t={t_sim:.6g}"
            )
        values[minsol.tc_var] = float(np.clip(v, tc.lo, tc.hi))
        x = np.array([values[v_] for v_ in var_order])
        resid = float(np.linalg.norm(system.values(x) * t_sim - targets))
        return LocalSolution(local.component_id, values, minsol.t_min, resid, minsol.tc_var, minsol.u)

    lo, hi = _bounds_arrays(var_order, aais)
    x0 = np.array([minsol.values.get(v, 0.0) for v in var_order])
    starts = [x0] + _sample_starts(lo, hi, 3, seed + local.component_id)
    x, resid = _nls(system, targets / t_sim, lo, hi, starts)
    values = {v: float(x[i]) for i, v in enumerate(var_order)}
    return LocalSolution(local.component_id, values, minsol.t_min, resid * t_sim)


# ---------------------------------------------------------------------------
# fixed-variable components


def _pair_power_entries(system: _ResidualSystem):
    return system._pattern


def _chained_seed(
    system: _ResidualSystem,
    targets_rate: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    min_sep: float,
) -> np.ndarray | None:
    """Initial positions chained along a maximum-weight coupling path.

    Each pair equation c*d^k = beta with beta > 0 fixes a desired distance
    d = (c/beta)^(1/|k|).  A line can realize only a path through the
    coupling graph, so edges are chained greedily by descending strength
    (degree <= 2, no cycles): whatever cannot be covered is the weakest
    couplings, which is where the residual should land.
    """
    pattern = _pair_power_entries(system)
    if pattern is None:
        return None
    ia, ib, cs, ks = pattern
    n = len(system.var_order)
    edges = []
    for a, b, c, k, beta in zip(ia, ib, cs, ks, targets_rate):
        if beta > 1e-12 and c > 0 and k < 0:
            d = (c / beta) ** (1.0 / abs(k))
            edges.append((float(beta), int(a), int(b), d))
    edges.sort(key=lambda e: (-e[0], e[1], e[2]))

    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    degree = [0] * n
    adj: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
    d_reqs = []
    for beta, a, b, d in edges:
        if degree[a] >= 2 or degree[b] >= 2 or find(a) == find(b):
            continue
        parent[find(a)] = find(b)
        degree[a] += 1
        degree[b] += 1
        adj[a].append((b, d))
        adj[b].append((a, d))
        d_reqs.append(d)

    span = float(np.min(hi - lo)) if n else 0.0
    gap = max(2.0 * max(d_reqs, default=min_sep), 4.0 * min_sep, 1.0)
    gap = min(gap, span if span > 0 else gap)

    pos = np.full(n, np.nan)
    cursor = 0.0
    # walk each path from its lowest-index endpoint
    endpoints = sorted(i for i in range(n) if degree[i] <= 1)
    for root in endpoints:
        if not math.isnan(pos[root]):
            continue
        pos[root] = cursor
        node, here = root, cursor
        while True:
            nxt = next(((nb, d) for nb, d in adj[node] if math.isnan(pos[nb])), None)
            if nxt is None:
                break
            node = nxt[0]
            here += nxt[1]
            pos[node] = here
        cursor = float(np.nanmax(pos)) + gap
    # squeeze into bounds if the chain overflows
    flo = np.where(np.isfinite(lo), lo, 0.0)
    fhi = np.where(np.isfinite(hi), hi, flo + 1e3)
    width = float(pos.max() - pos.min()) if n else 0.0
    box = float(np.min(fhi - flo)) if n else 0.0
    if width > box > 0:
        pos = pos * (box / width)
    pos = flo + (pos - pos.min() if n else 0.0)
    return np.clip(pos, flo, fhi)


def _separation_violation(values: Mapping[str, float], geometry: GeometryConstraints) -> float:
    """Worst min-separation shortfall over site pairs fully covered by `values`."""
    placed = []
    for coords in geometry.sites:
        if all(c in values for c in coords):
            placed.append(np.array([values[c] for c in coords]))
    worst = 0.0
    for i in range(len(placed)):
        for j in range(i + 1, len(placed)):
            dist = float(np.linalg.norm(placed[i] - placed[j]))
            worst = max(worst, geometry.min_separation - dist)
    return worst


def solve_fixed_vars(
    local: LocalSystem,
    alpha_star: np.ndarray,
    t_sim: float,
    sys: GlobalLinearSystem,
    aais: AAIS,
    dt_step: float,
    t_max: float,
    seed: int = 0,
    multistarts: int = 8,
) -> tuple[LocalSolution, float]:
    """Solve runtime-fixed variables at t_sim, relaxing time if geometry binds.

    Returns the solution and the (possibly increased) evolution time.  The
    residual is reported in accumulated-phase units (targets minus achieved,
    times the final time).
    """
    targets = local.targets(alpha_star)
    var_order = sorted(local.amplitude_vars)
    exprs = [sys.synth_vars[j].defining_expr for j in local.synth_indices]
    system = _ResidualSystem(exprs, var_order)
    lo, hi = _bounds_arrays(var_order, aais)
    comp_seed = (seed * 1000003 + local.component_id * 97 + 29) & 0x7FFFFFFF

    t = t_sim
    prev_x: np.ndarray | None = None
    while True:
        rate_targets = targets / t
        starts: list[np.ndarray] = []
        if prev_x is not None:
            starts.append(prev_x)
        chained = _chained_seed(system, rate_targets, lo, hi, aais.geometry.min_separation)
        if chained is not None:
            starts.append(chained)
        starts += _sample_starts(lo, hi, max(multistarts - len(starts), 1), comp_seed)
        x, resid = _nls(system, rate_targets, lo, hi, starts)
        values = {v: float(x[i]) for i, v in enumerate(var_order)}
        shortfall = _separation_violation(values, aais.geometry)
        if shortfall <= 1e-9:
            return (
                LocalSolution(local.component_id, values, t, resid * t),
                t,
            )
        if t + dt_step > t_max:
            raise SchedulingInfeasibleError(
                f"component {local.component_id}: geometry constraints unsatisfied "
                f"(min-separation shortfall {shortfall:.3g} um) and the relaxed time "
                f"{t + dt_step:.4g} us would exceed the cap {t_max:.4g} us"
            )
        log.warning(
            "component %d: min-separation shortfall %.3g um at t=%.6g us; relaxing to %.6g us",
            local.component_id,
            shortfall,
            t,
            t + dt_step,
        )
        prev_x = x
        t += dt_step


# ---------------------------------------------------------------------------
# share-group enforcement


def _apply_share_groups(aais: AAIS) -> tuple[AAIS, dict[str, str]]:
    """Collapse each share group onto one representative variable.

    Returns the rewritten AAIS and the member -> representative map used to
    expand solved values back onto every member.
    """
    groups: dict[str, list[AmplitudeVariable]] = {}
    for v in aais.variables:
        if v.share_group:
            groups.setdefault(v.share_group, []).append(v)
    mapping: dict[str, str] = {}
    replacements: dict[str, AmplitudeVariable] = {}
    drop: set[str] = set()
    for gname, members in groups.items():
        members = sorted(members, key=lambda v: v.id)
        rep = members[0]
        lo = max(m.lo for m in members)
        hi = min(m.hi for m in members)
        if lo > hi:
            raise InfeasibleError(f"share group {gname}: member bounds have empty intersection")
        replacements[rep.id] = replace(rep, bounds=(lo, hi))
        for m in members:
            mapping[m.id] = rep.id
            if m.id != rep.id:
                drop.add(m.id)
    if not mapping:
        return aais, {}

    def rewrite(e: Expr) -> Expr:
        from .expr import Cos, Power, Product, Sin, Sum

        if isinstance(e, Var):
            return Var(mapping.get(e.name, e.name))
        if isinstance(e, Sum):
            return Sum(tuple(rewrite(c) for c in e.children))
        if isinstance(e, Product):
            return Product(tuple(rewrite(c) for c in e.children))
        if isinstance(e, Power):
            return Power(rewrite(e.base), e.exponent)
        if isinstance(e, Cos):
            return Cos(rewrite(e.child))
        if isinstance(e, Sin):
            return Sin(rewrite(e.child))
        if isinstance(e, AbsDiff):
            return AbsDiff(rewrite(e.a), rewrite(e.b))
        return e

    variables = tuple(
        replacements.get(v.id, v) for v in aais.variables if v.id not in drop
    )
    instructions = tuple(
        replace(
            ins,
            effects=tuple((rewrite(expr), s) for expr, s in ins.effects),
        )
        for ins in aais.instructions
    )
    return replace(aais, variables=variables, instructions=instructions), mapping


def _expand_shared(values: dict[str, float], mapping: dict[str, str]) -> dict[str, float]:
    if not mapping:
        return values
    out = dict(values)
    for member, rep in mapping.items():
        if rep in values:
            out[member] = values[rep]
    return out


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class _SegmentSolve:
    """Per-segment working state used by compile and refine."""

    rhs: np.ndarray
    alpha_star: np.ndarray
    alpha_final: np.ndarray
    eps1: float
    t_machine: float
    dynamic: dict[str, float]


def _default_dynamic_values(aais: AAIS, assigned: set[str]) -> dict[str, float]:
    out = {}
    for v in aais.variables:
        if v.kind == RUNTIME_DYNAMIC and v.id not in assigned:
            out[v.id] = float(np.clip(0.0, v.lo, v.hi))
    return out


def _default_fixed_values(aais: AAIS, assigned: set[str]) -> dict[str, float]:
    out = {}
    for v in aais.variables:
        if v.kind == RUNTIME_FIXED and v.id not in assigned:
            out[v.id] = float(np.clip(0.0, v.lo, v.hi))
    return out


def _synth_alpha_box(
    s: SynthesizedVariable, aais: AAIS, t: float, seed: int
) -> tuple[float, float]:
    """Approximate reachable range of defining_expr * t over variable bounds.

    Sampled at bound corners, midpoints and a Sobol cloud; exact for the
    preset (linear / trigonometric) synthesized variables, and any
    overestimate is caught by the post-refinement bound check.
    """
    vars_ = sorted(s.amplitude_vars)
    if not vars_:
        v = eval_expr(s.defining_expr, {}) * t
        return v, v
    lo = np.array([max(aais.var(v).lo, -1e6) for v in vars_])
    hi = np.array([min(aais.var(v).hi, 1e6) for v in vars_])
    pts = []
    if len(vars_) <= 4:
        from itertools import product as iproduct

        for corner in iproduct(*[(l, 0.5 * (l + h), h) for l, h in zip(lo, hi)]):
            pts.append(np.array(corner))
    pts += _sample_starts(lo, hi, 32, seed)
    vals = []
    for p in pts:
        try:
            vals.append(eval_expr(s.defining_expr, dict(zip(vars_, p))))
        except Exception:
            continue
    if not vals:
        return -math.inf, math.inf
    return float(min(vals)) * t, float(max(vals)) * t


def refine_targets(
    sys: GlobalLinearSystem,
    fixed_mask: np.ndarray,
    delta_alpha_r: np.ndarray,
    box: tuple[np.ndarray, np.ndarray],
    use_l1: bool = False,
) -> np.ndarray:
    """Shift of dynamic synthesized targets cancelling fixed-variable error.

    Minimizes ||M_r dalpha_r + M_c dalpha_c|| over box-bounded dalpha_c;
    L2 by default, exact L1 via linear programming when requested.
    """
    m_fixed = sys.matrix[:, np.nonzero(fixed_mask)[0]]
    m_dyn = sys.matrix[:, np.nonzero(~fixed_mask)[0]]
    rhs = -(m_fixed @ delta_alpha_r)
    n_dyn = m_dyn.shape[1]
    if n_dyn == 0:
        return np.zeros(0)
    lo, hi = box
    lo = np.minimum(lo, 0.0)  # zero shift must stay admissible
    hi = np.maximum(hi, 0.0)
    if not use_l1:
        res = scipy.optimize.lsq_linear(m_dyn, rhs, bounds=(lo, hi), tol=1e-12)
        return np.asarray(res.x)
    # L1: min sum(s) s.t. -s <= M_c d - rhs <= s, box on d
    m = m_dyn.shape[0]
    md = m_dyn.toarray() if sp.issparse(m_dyn) else np.asarray(m_dyn)
    a_ub = np.block([[md, -np.eye(m)], [-md, -np.eye(m)]])
    b_ub = np.concatenate([rhs, -rhs])
    c = np.concatenate([np.zeros(n_dyn), np.ones(m)])
    bounds = [(l, h) for l, h in zip(lo, hi)] + [(0, None)] * m
    res = scipy.optimize.linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        log.warning("L1 refinement LP failed (%s); falling back to zero shift", res.message)
        return np.zeros(n_dyn)
    return np.asarray(res.x[:n_dyn])


def _build_segment(seg: _SegmentSolve, share_map: dict[str, str]) -> ScheduleSegment:
    return ScheduleSegment(
        t_machine=seg.t_machine,
        dynamic_values=dict(sorted(_expand_shared(seg.dynamic, share_map).items())),
    )


class _Pipeline:
    """One compilation run; holds shared state across stages and segments."""

    def __init__(self, target: TargetHamiltonian | PiecewiseTarget, aais: AAIS, options: CompileOptions):
        self.original_aais = aais
        self.options = options
        self.timings: dict[str, float] = {}
        self.aais, self.share_map = (
            _apply_share_groups(aais) if options.share_groups_enforced else (aais, {})
        )
        if isinstance(target, PiecewiseTarget):
            self.segment_targets = [target.segment_target(i) for i in range(len(target.segments))]
            self.unit = target.unit
            self.name = target.name
        else:
            self.segment_targets = [target]
            self.unit = target.unit
            self.name = target.name
        self.n_qubits = self.segment_targets[0].n_qubits

    def _stage(self, name: str, start: float) -> None:
        self.timings[name] = self.timings.get(name, 0.0) + (time.perf_counter() - start)

    def run(self) -> tuple[PulseSchedule, "report_mod.CompilationReport"]:
        opts = self.options
        t0 = time.perf_counter()
        union_terms = []
        for tg in self.segment_targets:
            union_terms.extend(tg.terms)
        index_target = TargetHamiltonian(
            self.n_qubits,
            tuple(union_terms),
            sum(tg.t_target for tg in self.segment_targets),
            unit=self.unit,
        )
        synths, inc = extract_synthesized(self.aais, index_target)
        self.sys = build_global_linear(synths, inc, index_target)
        self.locals_ = connected_components(synths, self.aais)
        self._stage("build", t0)

        t0 = time.perf_counter()
        segs: list[_SegmentSolve] = []
        for tg in self.segment_targets:
            rhs = target_vector(tg, self.sys.term_index)
            lin = solve_global_linear(replace(self.sys, rhs=rhs))
            segs.append(
                _SegmentSolve(
                    rhs=rhs,
                    alpha_star=lin.alpha_star,
                    alpha_final=lin.alpha_star.copy(),
                    eps1=lin.residual_l1,
                    t_machine=0.0,
                    dynamic={},
                )
            )
        self.segs = segs
        self._stage("linear_solve", t0)

        t0 = time.perf_counter()
        dyn_locals = [lc for lc in self.locals_ if not lc.has_fixed_vars]
        fix_locals = [lc for lc in self.locals_ if lc.has_fixed_vars]
        minsols: list[dict[int, LocalSolution]] = []
        for seg in segs:
            sols = {
                lc.component_id: local_min_time(
                    lc, seg.alpha_star, self.sys, self.aais, opts.seed, opts.multistarts
                )
                for lc in dyn_locals
            }
            minsols.append(sols)
            seg.t_machine = choose_t_sim(list(sols.values()))
        self._stage("min_time", t0)

        t0 = time.perf_counter()
        fixed_values: dict[str, float] = {}
        self.fixed_solutions: dict[int, LocalSolution] = {}
        if fix_locals:
            ref = self._reference_segment(fix_locals)
            seg = segs[ref]
            t_init = seg.t_machine
            dt = opts.dt_step if opts.dt_step is not None else 0.05 * t_init
            t_cap = self.aais.t_machine_max if self.aais.t_machine_max is not None else 10.0 * t_init
            # a relaxation by any component changes every component's rate
            # targets, so sweep until the time settles
            for _ in range(8):
                t_before = seg.t_machine
                for lc in fix_locals:
                    sol, t_new = solve_fixed_vars(
                        lc,
                        seg.alpha_star,
                        seg.t_machine,
                        self.sys,
                        self.aais,
                        dt_step=dt,
                        t_max=t_cap,
                        seed=opts.seed,
                        multistarts=opts.multistarts,
                    )
                    if t_new > seg.t_machine:
                        log.warning(
                            "evolution time relaxed from %.6g to %.6g us by fixed-variable constraints",
                            seg.t_machine,
                            t_new,
                        )
                    seg.t_machine = t_new
                    self.fixed_solutions[lc.component_id] = sol
                    fixed_values.update(sol.values)
                if seg.t_machine == t_before:
                    break
            # other segments: match the shared geometry's phase accumulation
            for si, other in enumerate(segs):
                if si == ref:
                    continue
                other.t_machine = self._matched_time(other, fixed_values, other.t_machine)
        self.fixed_values = fixed_values
        self._stage("fixed_vars", t0)

        t0 = time.perf_counter()
        for seg, sols in zip(segs, minsols):
            dynamic: dict[str, float] = {}
            for lc in dyn_locals:
                res = resolve_dynamic(
                    lc, sols[lc.component_id], seg.alpha_star, seg.t_machine, self.sys, self.aais, opts.seed
                )
                dynamic.update(res.values)
            # dynamic variables living inside fixed components hold one value
            for lc in fix_locals:
                sol = self.fixed_solutions[lc.component_id]
                for v, val in sol.values.items():
                    if self.aais.var(v).kind == RUNTIME_DYNAMIC:
                        dynamic[v] = val
            dynamic.update(_default_dynamic_values(self.aais, set(dynamic)))
            seg.dynamic = dynamic
        self.fixed_values.update(_default_fixed_values(self.aais, set(self.fixed_values)))
        self._stage("resolve", t0)

        cap = self.aais.t_machine_max
        total = sum(seg.t_machine for seg in segs)
        if cap is not None and total > cap + 1e-9:
            raise SchedulingInfeasibleError(
                f"total machine time {total:.4g} us exceeds the device cap {cap:.4g} us"
            )

        schedule = self._assemble()
        if opts.refine:
            t0 = time.perf_counter()
            schedule = self._refine(schedule, dyn_locals)
            self._stage("refine", t0)
        return schedule, self._report(schedule)

    # -- helpers

    def _reference_segment(self, fix_locals: Sequence[LocalSystem]) -> int:
        fixed_idx = [j for lc in fix_locals for j in lc.synth_indices]
        best, best_norm = 0, math.inf
        for si, seg in enumerate(self.segs):
            beta = np.abs(seg.alpha_star[fixed_idx]) / max(seg.t_machine, 1e-12)
            norm = float(beta.max()) if len(beta) else 0.0
            if norm <= 1e-12:
                continue
            if norm < best_norm - 1e-15:
                best, best_norm = si, norm
        return best if best_norm < math.inf else 0

    def _matched_time(self, seg: _SegmentSolve, fixed_values: dict[str, float], t_floor: float) -> float:
        """Least-squares time making the fixed geometry reproduce this segment."""
        fixed_idx = [
            j
            for lc in self.locals_
            if lc.has_fixed_vars
            for j in lc.synth_indices
        ]
        f = np.array(
            [eval_expr(self.sys.synth_vars[j].defining_expr, fixed_values) for j in fixed_idx]
        )
        alpha = seg.alpha_star[fixed_idx]
        denom = float(f @ f)
        if denom < 1e-300:
            return max(t_floor, MIN_SCHEDULABLE_US)
        t_fit = float(f @ alpha) / denom
        return max(t_fit, t_floor, MIN_SCHEDULABLE_US)

    def _assemble(self) -> PulseSchedule:
        return PulseSchedule(
            fixed_values=dict(sorted(_expand_shared(self.fixed_values, self.share_map).items())),
            segments=tuple(_build_segment(seg, self.share_map) for seg in self.segs),
            aais_name=self.original_aais.name,
            metadata={"target": self.name, "unit": self.unit, "seed": self.options.seed},
        )

    def _achieved_error(self, schedule: PulseSchedule) -> float:
        b_sim = report_mod.achieved_vector(schedule, self.sys)
        b_tar = np.sum([seg.rhs for seg in self.segs], axis=0)
        return float(np.abs(b_sim - b_tar).sum())

    def _refine(self, schedule: PulseSchedule, dyn_locals: Sequence[LocalSystem]) -> PulseSchedule:
        fixed_mask = self.sys.fixed_column_mask(self.aais)
        if not fixed_mask.any():
            self.refine_info = {"applied": False, "reason": "no fixed-variable columns"}
            return schedule
        e_before = self._achieved_error(schedule)
        fixed_idx = np.nonzero(fixed_mask)[0]
        dyn_idx = np.nonzero(~fixed_mask)[0]
        new_segs: list[_SegmentSolve] = []
        candidate_ok = True
        for si, seg in enumerate(self.segs):
            ach_r = np.array(
                [
                    eval_expr(self.sys.synth_vars[j].defining_expr, self.fixed_values)
                    for j in fixed_idx
                ]
            ) * seg.t_machine
            delta_r = ach_r - seg.alpha_star[fixed_idx]
            boxes = [
                _synth_alpha_box(self.sys.synth_vars[j], self.aais, seg.t_machine, self.options.seed)
                for j in dyn_idx
            ]
            lo = np.array([b[0] for b in boxes]) - seg.alpha_star[dyn_idx]
            hi = np.array([b[1] for b in boxes]) - seg.alpha_star[dyn_idx]
            delta_c = refine_targets(
                self.sys, fixed_mask, delta_r, (lo, hi), use_l1=self.options.refine_l1
            )
            alpha_new = seg.alpha_star.copy()
            alpha_new[dyn_idx] += delta_c
            # re-resolve dynamic components against the shifted targets
            dynamic = dict(seg.dynamic)
            try:
                for lc in dyn_locals:
                    base = local_min_time(
                        lc, alpha_new, self.sys, self.aais, self.options.seed, self.options.multistarts
                    )
                    if base.t_min > seg.t_machine + 1e-12:
                        raise InfeasibleError("refined targets need a longer evolution time")
                    res = resolve_dynamic(
                        lc, base, alpha_new, seg.t_machine, self.sys, self.aais, self.options.seed
                    )
                    dynamic.update(res.values)
            except InfeasibleError as exc:
                log.warning("refinement rolled back on segment %d: %s", si, exc)
                candidate_ok = False
                break
            new_segs.append(
                replace(
                    seg,
                    alpha_final=alpha_new,
                    eps1=float(np.abs(self.sys.matrix @ alpha_new - seg.rhs).sum()),
                    dynamic=dynamic,
                )
            )
        if not candidate_ok:
            self.refine_info = {"applied": False, "error_before": e_before, "error_after": e_before}
            return schedule
        old_segs = self.segs
        self.segs = new_segs
        candidate = self._assemble()
        e_after = self._achieved_error(candidate)
        if e_after <= e_before + 1e-12:
            self.refine_info = {"applied": True, "error_before": e_before, "error_after": e_after}
            return candidate
        log.warning(
            "refinement increased the error (%.6g -> %.6g); keeping the original schedule",
            e_before,
            e_after,
        )
        self.segs = old_segs
        self.refine_info = {"applied": False, "error_before": e_before, "error_after": e_before}
        return schedule

    def _report(self, schedule: PulseSchedule) -> "report_mod.CompilationReport":
        eps1 = sum(seg.eps1 for seg in self.segs)
        eps2: list[float] = []
        for lc in self.locals_:
            total = 0.0
            for seg in self.segs:
                targets = seg.alpha_final[list(lc.synth_indices)]
                if lc.has_fixed_vars:
                    values = dict(self.fixed_values)
                else:
                    values = {
                        v: seg.dynamic[v] for v in lc.amplitude_vars
                    }
                ach = np.array(
                    [
                        eval_expr(self.sys.synth_vars[j].defining_expr, values)
                        for j in lc.synth_indices
                    ]
                ) * seg.t_machine
                total += float(np.abs(ach - targets).sum())
            eps2.append(total)
        b_tar = np.sum([seg.rhs for seg in self.segs], axis=0)
        rep = report_mod.build_report(
            schedule,
            self.sys,
            b_tar,
            eps1=eps1,
            eps2=eps2,
            stage_timings=dict(self.timings),
            refinement=getattr(self, "refine_info", {"applied": False}),
            per_segment=[
                {"t_machine_us": seg.t_machine, "eps1": seg.eps1} for seg in self.segs
            ],
        )
        return rep


def compile_target(
    target: TargetHamiltonian,
    aais: AAIS,
    options: CompileOptions | None = None,
) -> tuple[PulseSchedule, "report_mod.CompilationReport"]:
    """End-to-end compilation of a time-independent target."""
    return _Pipeline(target, aais, options or CompileOptions()).run()


def compile_piecewise(
    target: PiecewiseTarget,
    aais: AAIS,
    options: CompileOptions | None = None,
) -> tuple[PulseSchedule, "report_mod.CompilationReport"]:
    """Compile a piecewise-constant target onto one shared geometry.

    Runtime-fixed variables are solved once on the reference segment (the one
    with the smallest required fixed amplitudes); the other segments stretch
    their machine time so the shared geometry accumulates the right phase,
    which only lowers the dynamic amplitudes.
    """
    if len(target.segments) == 1:
        seg = replace(target.segment_target(0), name=target.name)
        return compile_target(seg, aais, options)
    return _Pipeline(target, aais, options or CompileOptions()).run()


# ---------------------------------------------------------------------------
# schedule (de)serialization


def schedule_to_dict(schedule: PulseSchedule, report: "report_mod.CompilationReport | None" = None, include_timings: bool = False) -> dict:
    out = {
        "format_version": 1,
        "aais": schedule.aais_name,
        "unit": schedule.metadata.get("unit", "rad_per_us"),
        "metadata": {k: v for k, v in sorted(schedule.metadata.items())},
        "fixed": {k: float(v) for k, v in sorted(schedule.fixed_values.items())},
        "segments": [
            {
                "t_machine_us": float(seg.t_machine),
                "dynamic": {k: float(v) for k, v in sorted(seg.dynamic_values.items())},
            }
            for seg in schedule.segments
        ],
    }
    if report is not None:
        out["report"] = report.to_dict(include_timings=include_timings)
    return out


def schedule_from_dict(data: Mapping[str, object]) -> PulseSchedule:
    segments = tuple(
        ScheduleSegment(float(seg["t_machine_us"]), dict(seg["dynamic"]))
        for seg in data["segments"]  # type: ignore[union-attr]
    )
    return PulseSchedule(
        fixed_values=dict(data.get("fixed", {})),  # type: ignore[arg-type]
        segments=segments,
        aais_name=str(data.get("aais", "")),
        metadata=dict(data.get("metadata", {})),  # type: ignore[arg-type]
    )
