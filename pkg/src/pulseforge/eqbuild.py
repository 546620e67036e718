"""Factor instructions into synthesized variables and build the equation systems.

Each instruction's effects are grouped by "identical up to a constant
multiple"; one synthesized variable per group carries the shared scalar
expression, and the per-term constants become integer incidence coefficients.
The global linear system relates synthesized targets (amplitude x time, in
rad) to the target phase vector; the variable-dependency graph partitions
synthesized variables into independently solvable local systems.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .aais import AAIS, RUNTIME_FIXED
from .expr import Const, Expr, free_vars, serialize_str, simplify_product, split_constant
from .hamiltonian import PauliString, TargetHamiltonian, target_vector

log = logging.getLogger("pulseforge")

Incidence = list[tuple[PauliString, float]]


@dataclass(frozen=True)
class SynthesizedVariable:
    """Shared scalar factor of one instruction, to be multiplied by T_sim."""

    index: int
    defining_expr: Expr
    source_instruction: str
    amplitude_vars: frozenset[str]
    incidence: tuple[tuple[PauliString, float], ...]

    def is_constant(self) -> bool:
        return not self.amplitude_vars


def _group_key(core: Expr) -> str:
    return serialize_str(core)


def extract_synthesized(
    aais: AAIS, target: TargetHamiltonian | None = None
) -> tuple[list[SynthesizedVariable], list[Incidence]]:
    """Factor every instruction effect list into synthesized variables.

    Returns the variables plus a parallel incidence list (Pauli term,
    constant coefficient).  Within a group the representative expression keeps
    the group's common sign when all effects agree on it, otherwise it is
    taken positive and the signs land in the incidence coefficients; either
    way preset incidences are exactly +-1.
    """
    synths: list[SynthesizedVariable] = []
    incidences: list[Incidence] = []
    for instr in aais.instructions:
        groups: dict[str, list[tuple[float, Expr, PauliString]]] = {}
        order: list[str] = []
        for expr, string in instr.effects:
            const, core = split_constant(expr)
            key = _group_key(core)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append((const, core, string))
        for key in order:
            entries = sorted(groups[key], key=lambda e: e[2].ops)
            consts = [c for c, _, _ in entries]
            core = entries[0][1]
            same_sign = all(c > 0 for c in consts) or all(c < 0 for c in consts)
            rep_const = consts[0] if same_sign else abs(consts[0])
            defining = simplify_product([Const(rep_const), core])
            incidence = [(string, c / rep_const) for c, _, string in entries]
            synths.append(
                SynthesizedVariable(
                    index=len(synths),
                    defining_expr=defining,
                    source_instruction=instr.name,
                    amplitude_vars=free_vars(defining),
                    incidence=tuple(incidence),
                )
            )
            incidences.append(incidence)
    return synths, incidences


@dataclass(frozen=True)
class GlobalLinearSystem:
    """M alpha = B_tar over synthesized variables, rows in canonical term order."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    term_index: tuple[PauliString, ...]
    synth_vars: tuple[SynthesizedVariable, ...]

    @property
    def term_pos(self) -> dict[PauliString, int]:
        cached = self.__dict__.get("_term_pos_cache")
        if cached is None:
            cached = {s: i for i, s in enumerate(self.term_index)}
            self.__dict__["_term_pos_cache"] = cached
        return cached

    def norm1(self) -> float:
        """Induced-L1 operator norm: maximum absolute column sum."""
        if self.matrix.shape[1] == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix).sum(axis=0)))

    def with_rhs(self, target: TargetHamiltonian) -> "GlobalLinearSystem":
        return replace(self, rhs=target_vector(target, self.term_index))

    def fixed_column_mask(self, aais: AAIS) -> np.ndarray:
        fixed_ids = set(aais.fixed_variable_ids())
        return np.array([bool(s.amplitude_vars & fixed_ids) for s in self.synth_vars])


def build_global_linear(
    synths: Sequence[SynthesizedVariable],
    incidences: Sequence[Incidence],
    target: TargetHamiltonian,
) -> GlobalLinearSystem:
    """Assemble the sparse global linear system.

    Rows cover the union of target strings and all instruction-producible
    strings: simulator-only terms get a zero right-hand side, and target terms
    no instruction can produce become all-zero rows whose infeasibility
    surfaces in the linear residual.
    """
    strings = {t.string for t in target.terms}
    for inc in incidences:
        strings.update(s for s, _ in inc)
    term_index = tuple(sorted(strings, key=lambda s: s.ops))
    pos = {s: i for i, s in enumerate(term_index)}

    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for j, inc in enumerate(incidences):
        for string, coeff in inc:
            rows.append(pos[string])
            cols.append(j)
            vals.append(coeff)
    matrix = sp.csr_matrix(
        (vals, (rows, cols)), shape=(len(term_index), len(synths))
    )
    rhs = target_vector(target, term_index)

    covered = np.zeros(len(term_index), dtype=bool)
    covered[sorted({r for r in rows})] = True
    for i in np.nonzero(~covered & (rhs != 0.0))[0]:
        log.warning(
            "target term %s (weight %.6g rad) is not producible by any instruction",
            term_index[i].label(),
            rhs[i],
        )
    return GlobalLinearSystem(matrix, rhs, term_index, tuple(synths))


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


@dataclass(frozen=True)
class LocalSystem:
    """One connected component of the variable-dependency graph."""

    component_id: int
    amplitude_vars: frozenset[str]
    synth_indices: tuple[int, ...]
    has_fixed_vars: bool
    time_critical_var: str | None
    time_critical_vars: tuple[str, ...] = ()

    def targets(self, alpha_star: np.ndarray) -> np.ndarray:
        return alpha_star[list(self.synth_indices)]


def connected_components(synths: Sequence[SynthesizedVariable], aais: AAIS) -> list[LocalSystem]:
    """Partition synthesized variables by shared amplitude variables.

    Bipartite union-find: synthesized variables and amplitude variables are
    nodes, membership gives edges.  Components with no amplitude variables
    (pure-constant factors) stay singletons and are handled by the
    minimum-time search without a time-critical variable.
    """
    var_ids = sorted({v for s in synths for v in s.amplitude_vars})
    var_node = {v: i for i, v in enumerate(var_ids)}
    n_vars = len(var_ids)
    uf = _UnionFind(n_vars + len(synths))
    for j, s in enumerate(synths):
        for v in s.amplitude_vars:
            uf.union(var_node[v], n_vars + j)

    members: dict[int, tuple[set[str], list[int]]] = {}
    for j, s in enumerate(synths):
        root = uf.find(n_vars + j)
        vars_, idxs = members.setdefault(root, (set(), []))
        vars_.update(s.amplitude_vars)
        idxs.append(j)

    out: list[LocalSystem] = []
    roots = sorted(members, key=lambda r: min(members[r][1]))
    for cid, root in enumerate(roots):
        vars_, idxs = members[root]
        tc = tuple(sorted(v for v in vars_ if aais.var(v).time_critical))
        if len(tc) > 1:
            log.warning(
                "component %d has %d time-critical variables (%s); "
                "falling back to bisection for its minimum time",
                cid,
                len(tc),
                ", ".join(tc),
            )
        out.append(
            LocalSystem(
                component_id=cid,
                amplitude_vars=frozenset(vars_),
                synth_indices=tuple(sorted(idxs)),
                has_fixed_vars=any(aais.var(v).kind == RUNTIME_FIXED for v in vars_),
                time_critical_var=tc[0] if len(tc) == 1 else None,
                time_critical_vars=tc,
            )
        )
    return out


def eqsys_to_dict(sys: GlobalLinearSystem, locals_: Iterable[LocalSystem]) -> dict:
    """Debug dump: term index, M in coordinate form, rhs and components."""
    coo = sys.matrix.tocoo()
    return {
        "format_version": 1,
        "term_index": [s.label() for s in sys.term_index],
        "matrix": {
            "shape": list(coo.shape),
            "entries": [
                [int(r), int(c), float(v)] for r, c, v in zip(coo.row, coo.col, coo.data)
            ],
        },
        "rhs": [float(v) for v in sys.rhs],
        "synthesized": [
            {
                "index": s.index,
                "instruction": s.source_instruction,
                "expr": serialize_str(s.defining_expr),
                "variables": sorted(s.amplitude_vars),
            }
            for s in sys.synth_vars
        ],
        "components": [
            {
                "id": lc.component_id,
                "variables": sorted(lc.amplitude_vars),
                "synthesized": list(lc.synth_indices),
                "has_fixed_vars": lc.has_fixed_vars,
                "time_critical": lc.time_critical_var,
            }
            for lc in locals_
        ],
    }
