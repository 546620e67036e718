"""Benchmark model generators and the compile-suite harness.

Models cover the usual spin-chain families (Ising chain/cycle, Kitaev,
next-nearest-neighbour Ising, Heisenberg chain, PXP) plus a time-dependent
maximum-independent-set anneal discretized into piecewise-constant segments.
Number-operator forms are expanded to Pauli terms with identities dropped.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .aais import AAIS, DeviceBounds, build_heisenberg_aais, build_rydberg_aais
from .errors import CompilerError, InvalidInputError
from .hamiltonian import PauliString, PiecewiseTarget, TargetHamiltonian, WeightedTerm
from .solve import CompileOptions, compile_piecewise, compile_target


def worker_count() -> int:
    """Thread cap from QTURBO_THREADS; 0 or unset means auto."""
    raw = os.environ.get("QTURBO_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"QTURBO_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise InvalidInputError("QTURBO_THREADS must be >= 0")
    return n if n > 0 else (os.cpu_count() or 1)

MODELS = (
    "ising_chain",
    "ising_cycle",
    "kitaev",
    "ising_cycle_plus",
    "heis_chain",
    "mis_chain",
    "pxp",
)


@dataclass(frozen=True)
class BenchmarkSpec:
    model: str
    n: int
    params: dict[str, float] = field(default_factory=dict)
    t_target: float = 1.0
    segments: int | None = None

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise InvalidInputError(f"unknown benchmark model {self.model!r}; expected one of {MODELS}")
        if self.n < 2:
            raise InvalidInputError("benchmark models need at least 2 sites")
        if self.model == "mis_chain":
            if self.segments is None or self.segments < 1:
                raise InvalidInputError("mis_chain needs segments >= 1")
        elif self.segments is not None:
            raise InvalidInputError(f"{self.model} is time-independent; 'segments' does not apply")


def _zz(i: int, j: int, coeff: float) -> WeightedTerm:
    return WeightedTerm(coeff, PauliString(((i, "Z"), (j, "Z"))))


def _single(i: int, op: str, coeff: float) -> WeightedTerm:
    return WeightedTerm(coeff, PauliString(((i, op),)))


def _number_pair(i: int, j: int, coeff: float) -> list[WeightedTerm]:
    # n_i n_j = (I - Z_i - Z_j + Z_i Z_j) / 4, identity dropped
    return [
        _single(i, "Z", -coeff / 4.0),
        _single(j, "Z", -coeff / 4.0),
        _zz(i, j, coeff / 4.0),
    ]


def _number(i: int, coeff: float) -> list[WeightedTerm]:
    # n_i = (I - Z_i) / 2, identity dropped
    return [_single(i, "Z", -coeff / 2.0)]


def generate(spec: BenchmarkSpec) -> TargetHamiltonian | PiecewiseTarget:
    """Materialize a benchmark target; parameters default to 1 MHz-equivalent."""
    n = spec.n
    p = dict(spec.params)
    name = f"{spec.model}_{n}"

    def par(key: str, default: float = 1.0) -> float:
        return float(p.get(key, default))

    terms: list[WeightedTerm] = []
    if spec.model == "ising_chain":
        j, h = par("J"), par("h")
        terms += [_zz(i, i + 1, j) for i in range(n - 1)]
        terms += [_single(i, "X", h) for i in range(n)]
    elif spec.model == "ising_cycle":
        j, h = par("J"), par("h")
        terms += [_zz(i, (i + 1) % n, j) for i in range(n)]
        terms += [_single(i, "X", h) for i in range(n)]
    elif spec.model == "kitaev":
        mu, t_hop, h = par("mu"), par("t"), par("h")
        terms += [_zz(i, i + 1, mu / 2.0) for i in range(n - 1)]
        terms += [_single(i, "X", -t_hop) for i in range(n)]
        terms += [_single(i, "Z", -h) for i in range(n)]
    elif spec.model == "ising_cycle_plus":
        j, h = par("J"), par("h")
        terms += [_zz(i, (i + 1) % n, j) for i in range(n)]
        terms += [_zz(i, (i + 2) % n, j / 2.0**6) for i in range(n)]
        terms += [_single(i, "X", h) for i in range(n)]
    elif spec.model == "heis_chain":
        j, h = par("J"), par("h")
        for i in range(n - 1):
            for op in ("X", "Y", "Z"):
                terms.append(WeightedTerm(j, PauliString(((i, op), (i + 1, op)))))
        terms += [_single(i, "X", h) for i in range(n)]
    elif spec.model == "pxp":
        j, h = par("J"), par("h")
        for i in range(n - 1):
            terms += _number_pair(i, i + 1, j)
        terms += [_single(i, "X", h) for i in range(n)]
    elif spec.model == "mis_chain":
        u, omega, alpha = par("U"), par("omega"), par("alpha")
        segs = []
        s = spec.segments or 1
        for k in range(s):
            # normalized anneal time sampled at the segment midpoint
            tm = (k + 0.5) / s
            seg_terms: list[WeightedTerm] = []
            for i in range(n):
                seg_terms += _number(i, (1.0 - 2.0 * tm) * u)
                seg_terms.append(_single(i, "X", omega / 2.0))
            for i in range(n - 1):
                seg_terms += _number_pair(i, i + 1, alpha)
            segs.append((spec.t_target / s, tuple(seg_terms)))
        return PiecewiseTarget(n, tuple(segs), name=name)
    else:  # pragma: no cover - guarded by BenchmarkSpec
        raise InvalidInputError(f"unknown model {spec.model!r}")
    return TargetHamiltonian(n, tuple(terms), spec.t_target, name=name)


def default_aais_for(spec: BenchmarkSpec, kind: str, target=None) -> AAIS:
    """Device model used by the suite harness.

    Rydberg geometry scales its placement box with the site count; the
    Heisenberg coupling graph mirrors the target's two-local support so every
    producible term has an instruction.
    """
    if kind == "rydberg":
        bounds = DeviceBounds(position_max=max(75.0, 10.0 * spec.n))
        return build_rydberg_aais(spec.n, dims=1, bounds=bounds)
    if kind == "heisenberg":
        if target is None:
            target = generate(spec)
        edges: set[tuple[int, int]] = set()
        if isinstance(target, PiecewiseTarget):
            term_lists = [terms for _, terms in target.segments]
        else:
            term_lists = [target.terms]
        for terms in term_lists:
            for t in terms:
                qs = [q for q, _ in t.string.ops]
                if len(qs) == 2:
                    edges.add((min(qs), max(qs)))
        return build_heisenberg_aais(spec.n, sorted(edges))
    raise InvalidInputError(f"unknown AAIS kind {kind!r} (expected 'rydberg' or 'heisenberg')")


@dataclass(frozen=True)
class SuiteRow:
    model: str
    n: int
    aais: str
    status: str
    compile_seconds: float
    t_machine_us: float
    relative_error_pct: float
    error_l1: float
    bound: float

    def as_list(self) -> list:
        return [
            self.model,
            self.n,
            self.aais,
            self.status,
            f"{self.compile_seconds:.6f}",
            f"{self.t_machine_us:.9g}",
            f"{self.relative_error_pct:.9g}",
            f"{self.error_l1:.9g}",
            f"{self.bound:.9g}",
        ]


SUITE_HEADER = [
    "model",
    "n",
    "aais",
    "status",
    "compile_seconds",
    "t_machine_us",
    "relative_error_pct",
    "error_l1",
    "bound",
]


def _run_cell(model: str, n: int, aais_kind: str, options: CompileOptions, segments: int) -> SuiteRow:
    spec = BenchmarkSpec(model, n, segments=segments if model == "mis_chain" else None)
    try:
        target = generate(spec)
        aais = default_aais_for(spec, aais_kind, target)
        start = time.perf_counter()
        if isinstance(target, PiecewiseTarget):
            schedule, rep = compile_piecewise(target, aais, options)
        else:
            schedule, rep = compile_target(target, aais, options)
        elapsed = time.perf_counter() - start
        return SuiteRow(
            model,
            n,
            aais_kind,
            "ok",
            elapsed,
            schedule.total_time(),
            rep.relative_error_pct,
            rep.error_l1,
            rep.bound,
        )
    except CompilerError as exc:
        return SuiteRow(
            model, n, aais_kind, f"error: {exc}", 0.0, 0.0, float("nan"), float("nan"), float("nan")
        )


def run_suite(
    models: Sequence[str],
    sizes: Sequence[int],
    aais_kind: str,
    options: CompileOptions | None = None,
    segments: int = 4,
) -> list[SuiteRow]:
    """Compile every (model, size) cell, recording wall time and accuracy.

    Cells are independent: they run on up to QTURBO_THREADS workers and the
    output ordering is canonical regardless of completion order.  Per-cell
    failures are recorded as rows with a non-ok status; the suite keeps going.
    """
    options = options or CompileOptions()
    cells = [(model, n) for model in models for n in sizes]
    workers = min(worker_count(), max(len(cells), 1))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(lambda c: _run_cell(c[0], c[1], aais_kind, options, segments), cells)
            )
    else:
        rows = [_run_cell(model, n, aais_kind, options, segments) for model, n in cells]
    rows.sort(key=lambda r: (r.model, r.n, r.aais))
    return rows


def suite_to_csv(rows: Sequence[SuiteRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(SUITE_HEADER)
    for row in rows:
        writer.writerow(row.as_list())
    return buf.getvalue()


def suite_to_json(rows: Sequence[SuiteRow]) -> str:
    payload = [dict(zip(SUITE_HEADER, r.as_list())) for r in rows]
    return json.dumps({"format_version": 1, "results": payload}, indent=2, sort_keys=True)
