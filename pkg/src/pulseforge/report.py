"""Compilation quality metrics: achieved phases, error, and the a-priori bound.

The error metric is the L1 distance between achieved and requested
accumulated-phase vectors; it is always dominated by
||M||_1 * sum(eps2_i) + eps1, composing the linear-solve residual with the
per-component local residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from .expr import eval_expr

if TYPE_CHECKING:  # pragma: no cover
    from .eqbuild import GlobalLinearSystem
    from .solve import PulseSchedule


def achieved_vector(schedule: "PulseSchedule", sys: "GlobalLinearSystem") -> np.ndarray:
    """Per-term accumulated phase the schedule actually produces.

    Evaluates every synthesized expression at the solved values, scales by
    each segment's machine time, sums over segments and applies M.
    """
    alpha = np.zeros(len(sys.synth_vars))
    for seg_index in range(len(schedule.segments)):
        assign = schedule.assignment(seg_index)
        t = schedule.segments[seg_index].t_machine
        alpha += np.array(
            [eval_expr(s.defining_expr, assign) for s in sys.synth_vars]
        ) * t
    return np.asarray(sys.matrix @ alpha)


def error_metrics(b_sim: np.ndarray, b_tar: np.ndarray) -> tuple[float, float]:
    """(E, relative error in percent).

    With a zero target vector the relative error is 0 when E is 0 and NaN
    (undefined) otherwise.
    """
    b_sim = np.asarray(b_sim, dtype=float)
    b_tar = np.asarray(b_tar, dtype=float)
    if b_sim.shape != b_tar.shape:
        raise ValueError("achieved and target vectors must have equal length")
    e = float(np.abs(b_sim - b_tar).sum())
    denom = float(np.abs(b_tar).sum())
    if denom == 0.0:
        return e, 0.0 if e == 0.0 else math.nan
    return e, 100.0 * e / denom


def error_bound(m_norm1: float, eps1: float, eps2: Sequence[float]) -> float:
    """||M||_1 * sum(eps2_i) + eps1, with ||M||_1 the max absolute column sum."""
    if eps1 < 0 or any(e < 0 for e in eps2):
        raise ValueError("residual bounds must be non-negative")
    return m_norm1 * float(sum(eps2)) + eps1


@dataclass(frozen=True)
class CompilationReport:
    b_sim: np.ndarray
    b_tar: np.ndarray
    error_l1: float
    relative_error_pct: float
    eps1: float
    eps2: tuple[float, ...]
    m_norm1: float
    bound: float
    t_machine_total: float
    stage_timings: dict[str, float] = field(default_factory=dict)
    refinement: dict = field(default_factory=dict)
    per_segment: tuple[dict, ...] = ()
    term_labels: tuple[str, ...] = ()

    def to_dict(self, include_timings: bool = False) -> dict:
        def clean(x: float) -> float | None:
            return None if math.isnan(x) else float(x)

        out = {
            "error_l1": float(self.error_l1),
            "relative_error_pct": clean(self.relative_error_pct),
            "eps1": float(self.eps1),
            "eps2": [float(e) for e in self.eps2],
            "m_norm1": float(self.m_norm1),
            "bound": float(self.bound),
            "t_machine_total_us": float(self.t_machine_total),
            "refinement": dict(sorted(self.refinement.items())),
            "per_segment": [dict(sorted(d.items())) for d in self.per_segment],
        }
        if include_timings:
            out["stage_timings"] = {k: float(v) for k, v in sorted(self.stage_timings.items())}
        return out


def build_report(
    schedule: "PulseSchedule",
    sys: "GlobalLinearSystem",
    b_tar: np.ndarray,
    eps1: float,
    eps2: Sequence[float],
    stage_timings: Mapping[str, float] | None = None,
    refinement: Mapping[str, object] | None = None,
    per_segment: Sequence[dict] | None = None,
) -> CompilationReport:
    b_sim = achieved_vector(schedule, sys)
    e, rel = error_metrics(b_sim, b_tar)
    m_norm1 = sys.norm1()
    return CompilationReport(
        b_sim=b_sim,
        b_tar=np.asarray(b_tar, dtype=float),
        error_l1=e,
        relative_error_pct=rel,
        eps1=float(eps1),
        eps2=tuple(float(x) for x in eps2),
        m_norm1=m_norm1,
        bound=error_bound(m_norm1, float(eps1), [float(x) for x in eps2]),
        t_machine_total=schedule.total_time(),
        stage_timings=dict(stage_timings or {}),
        refinement=dict(refinement or {}),
        per_segment=tuple(per_segment or ()),
        term_labels=tuple(s.label() for s in sys.term_index),
    )


def format_report_table(data: Mapping[str, object]) -> str:
    """Human-readable rendering of a report dictionary (inspect subcommand)."""
    lines = ["compilation report", "-" * 46]

    def row(label: str, value: object) -> None:
        lines.append(f"{label:<28}{value}")

    rel = data.get("relative_error_pct")
    row("error E (rad, L1)", f"{data.get('error_l1', float('nan')):.6g}")
    row("relative error", "undefined" if rel is None else f"{rel:.4f} %")
    row("linear residual eps1", f"{data.get('eps1', float('nan')):.6g}")
    eps2 = data.get("eps2", [])
    row("local residuals sum(eps2)", f"{sum(eps2):.6g} over {len(eps2)} components")
    row("matrix norm ||M||_1", f"{data.get('m_norm1', float('nan')):.6g}")
    row("error bound", f"{data.get('bound', float('nan')):.6g}")
    row("machine time (us)", f"{data.get('t_machine_total_us', float('nan')):.6g}")
    refinement = data.get("refinement") or {}
    if refinement:
        row("refinement applied", refinement.get("applied"))
        if "error_before" in refinement:
            row(
                "refinement E before/after",
                f"{refinement['error_before']:.6g} / {refinement['error_after']:.6g}",
            )
    for i, seg in enumerate(data.get("per_segment", [])):
        row(f"segment {i}", f"t={seg.get('t_machine_us'):.6g} us  eps1={seg.get('eps1'):.3g}")
    timings = data.get("stage_timings") or {}
    for stage, secs in timings.items():
        row(f"time[{stage}]", f"{secs:.4f} s")
    return "\n".join(lines)
