"""Abstract analog instruction sets: typed bounded variables and instructions.

An instruction is a list of (expression, PauliString) effects; number-operator
products are already expanded into Pauli terms by the builders, with identity
components dropped.  Two presets are provided: the Rydberg-array set (van der
Waals pair coupling, per-site detuning and Rabi drive) and the Heisenberg set
(one tunable amplitude per supported Pauli string).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import InvalidInputError
from .expr import (
    AbsDiff,
    Const,
    Cos,
    Expr,
    Power,
    Product,
    Sin,
    Var,
    eval_expr,
    free_vars,
    parse_expr,
    serialize_expr,
)
from .hamiltonian import PauliString, canonicalize, WeightedTerm

#: van der Waals coefficient, MHz-equivalent angular units times um^6
C6 = 862690.0

RUNTIME_FIXED = "RuntimeFixed"
RUNTIME_DYNAMIC = "RuntimeDynamic"


@dataclass(frozen=True)
class AmplitudeVariable:
    """One tunable knob: rad/us amplitudes, um positions or rad phases."""

    id: str
    kind: str
    time_critical: bool = False
    bounds: tuple[float, float] = (-math.inf, math.inf)
    unit: str = "rad_per_us"
    share_group: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in (RUNTIME_FIXED, RUNTIME_DYNAMIC):
            raise InvalidInputError(f"variable kind must be RuntimeFixed/RuntimeDynamic, got {self.kind!r}")
        lo, hi = self.bounds
        if not lo <= hi:
            raise InvalidInputError(f"variable {self.id}: bounds lo <= hi violated ({lo}, {hi})")
        if self.time_critical and self.kind != RUNTIME_DYNAMIC:
            raise InvalidInputError(f"variable {self.id}: time-critical variables must be runtime dynamic")

    @property
    def lo(self) -> float:
        return self.bounds[0]

    @property
    def hi(self) -> float:
        return self.bounds[1]


@dataclass(frozen=True)
class Instruction:
    """Named group of (expression, PauliString) effects sharing variables."""

    name: str
    effects: tuple[tuple[Expr, PauliString], ...]
    variables: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        seen: set[PauliString] = set()
        for expr, string in self.effects:
            if string.is_identity():
                raise InvalidInputError(f"instruction {self.name}: identity effects must be dropped")
            if string in seen:
                raise InvalidInputError(f"instruction {self.name}: duplicate effect on {string.label()}")
            seen.add(string)
        refs = frozenset().union(*(free_vars(expr) for expr, _ in self.effects)) if self.effects else frozenset()
        object.__setattr__(self, "variables", refs)


@dataclass(frozen=True)
class GeometryConstraints:
    """Placement rules for runtime-fixed position variables.

    `sites` lists per-site coordinate variable ids, one tuple per site
    ((x,) in 1D, (x, y) in 2D); separation applies to every site pair.
    """

    sites: tuple[tuple[str, ...], ...] = ()
    min_separation: float = 0.0


@dataclass(frozen=True)
class AAIS:
    n_sites: int
    variables: tuple[AmplitudeVariable, ...]
    instructions: tuple[Instruction, ...]
    t_machine_max: float | None = None
    geometry: GeometryConstraints = GeometryConstraints()
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_sites < 1:
            raise InvalidInputError("AAIS needs at least one site")
        ids = [v.id for v in self.variables]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate variable ids in AAIS")
        declared = set(ids)
        for instr in self.instructions:
            missing = instr.variables - declared
            if missing:
                raise InvalidInputError(f"instruction {instr.name} references undeclared variables {sorted(missing)}")

    def var(self, var_id: str) -> AmplitudeVariable:
        return self._var_map[var_id]

    @property
    def _var_map(self) -> dict[str, AmplitudeVariable]:
        cached = self.__dict__.get("_var_map_cache")
        if cached is None:
            cached = {v.id: v for v in self.variables}
            self.__dict__["_var_map_cache"] = cached
        return cached

    def fixed_variable_ids(self) -> list[str]:
        return [v.id for v in self.variables if v.kind == RUNTIME_FIXED]


@dataclass(frozen=True)
class DeviceBounds:
    """Rydberg device limits, MHz-equivalent amplitudes / um geometry."""

    delta_max: float = 20.0
    omega_max: float = 2.5
    phi_bounds: tuple[float, float] = (-math.pi, math.pi)
    position_max: float = 75.0
    min_separation: float = 4.0
    t_machine_max: float | None = 4.0


def build_rydberg_aais(
    n_sites: int,
    dims: int = 1,
    bounds: DeviceBounds | None = None,
    shared_controls: bool = False,
) -> AAIS:
    """Rydberg-array instruction set on `n_sites` atoms.

    Per pair i<j a van der Waals coupling C6/|xi-xj|^6 n_i n_j expanded onto
    Z_i, Z_j, Z_iZ_j; per site a detuning -Delta_i n_i (time-critical) and a
    Rabi pair ((Omega_i/2)cos(phi_i) X_i, -(Omega_i/2)sin(phi_i) Y_i).
    `shared_controls` tags per-site controls with a share group; enforcement
    happens at compile time when requested.
    """
    if bounds is None:
        bounds = DeviceBounds()
    if n_sites < 1:
        raise InvalidInputError("n_sites must be >= 1")
    if dims not in (1, 2):
        raise InvalidInputError("dims must be 1 or 2")

    variables: list[AmplitudeVariable] = []
    sites: list[tuple[str, ...]] = []
    for i in range(n_sites):
        coords = [f"x_{i}"] if dims == 1 else [f"x_{i}", f"y_{i}"]
        for c in coords:
            variables.append(
                AmplitudeVariable(c, RUNTIME_FIXED, bounds=(0.0, bounds.position_max), unit="um")
            )
        sites.append(tuple(coords))
    for i in range(n_sites):
        variables.append(
            AmplitudeVariable(
                f"Delta_{i}",
                RUNTIME_DYNAMIC,
                time_critical=True,
                bounds=(-bounds.delta_max, bounds.delta_max),
                share_group="Delta" if shared_controls else None,
            )
        )
        variables.append(
            AmplitudeVariable(
                f"Omega_{i}",
                RUNTIME_DYNAMIC,
                time_critical=True,
                bounds=(0.0, bounds.omega_max),
                share_group="Omega" if shared_controls else None,
            )
        )
        variables.append(
            AmplitudeVariable(
                f"phi_{i}",
                RUNTIME_DYNAMIC,
                bounds=bounds.phi_bounds,
                unit="rad",
                share_group="phi" if shared_controls else None,
            )
        )

    def pair_distance_power(i: int, j: int) -> Expr:
        # |xi - xj|^-6 in 1D; (dx^2 + dy^2)^-3 in 2D
        if dims == 1:
            return Power(AbsDiff(Var(f"x_{i}"), Var(f"x_{j}")), -6)
        from .expr import Sum

        d2 = Sum(
            (
                Power(AbsDiff(Var(f"x_{i}"), Var(f"x_{j}")), 2),
                Power(AbsDiff(Var(f"y_{i}"), Var(f"y_{j}")), 2),
            )
        )
        return Power(d2, -3)

    instructions: list[Instruction] = []
    quarter = C6 / 4.0
    for i in range(n_sites):
        for j in range(i + 1, n_sites):
            dist = pair_distance_power(i, j)
            instructions.append(
                Instruction(
                    f"vdw_{i}_{j}",
                    (
                        (Product((Const(-quarter), dist)), PauliString(((i, "Z"),))),
                        (Product((Const(-quarter), dist)), PauliString(((j, "Z"),))),
                        (Product((Const(quarter), dist)), PauliString(((i, "Z"), (j, "Z")))),
                    ),
                )
            )
    for i in range(n_sites):
        instructions.append(
            Instruction(
                f"detuning_{i}",
                ((Product((Const(0.5), Var(f"Delta_{i}"))), PauliString(((i, "Z"),))),),
            )
        )
        instructions.append(
            Instruction(
                f"rabi_{i}",
                (
                    (
                        Product((Const(0.5), Var(f"Omega_{i}"), Cos(Var(f"phi_{i}")))),
                        PauliString(((i, "X"),)),
                    ),
                    (
                        Product((Const(-0.5), Var(f"Omega_{i}"), Sin(Var(f"phi_{i}")))),
                        PauliString(((i, "Y"),)),
                    ),
                ),
            )
        )

    return AAIS(
        n_sites=n_sites,
        variables=tuple(variables),
        instructions=tuple(instructions),
        t_machine_max=bounds.t_machine_max,
        geometry=GeometryConstraints(tuple(sites), bounds.min_separation),
        name=f"rydberg_{n_sites}",
    )


def build_heisenberg_aais(
    n_sites: int,
    coupling_graph: Sequence[tuple[int, int]],
    amplitude_max: float = 20.0,
    t_machine_max: float | None = None,
) -> AAIS:
    """Heisenberg-style set: a^{P_i} P_i per site and a^{P_iP_j} P_iP_j per edge.

    Every amplitude is runtime dynamic and time-critical; there are no
    runtime-fixed variables.
    """
    if n_sites < 1:
        raise InvalidInputError("n_sites must be >= 1")
    edges = []
    for a, b in coupling_graph:
        if not (0 <= a < n_sites and 0 <= b < n_sites) or a == b:
            raise InvalidInputError(f"invalid coupling edge ({a}, {b}) for {n_sites} sites")
        edges.append((min(a, b), max(a, b)))
    if len(set(edges)) != len(edges):
        raise InvalidInputError("duplicate edges in coupling graph")

    variables: list[AmplitudeVariable] = []
    instructions: list[Instruction] = []
    bnd = (-abs(amplitude_max), abs(amplitude_max))
    for i in range(n_sites):
        for p in ("X", "Y", "Z"):
            vid = f"a_{p}{i}"
            variables.append(AmplitudeVariable(vid, RUNTIME_DYNAMIC, time_critical=True, bounds=bnd))
            instructions.append(
                Instruction(f"single_{p}{i}", ((Var(vid), PauliString(((i, p),))),))
            )
    for a, b in edges:
        for p in ("X", "Y", "Z"):
            vid = f"a_{p}{a}{p}{b}"
            variables.append(AmplitudeVariable(vid, RUNTIME_DYNAMIC, time_critical=True, bounds=bnd))
            instructions.append(
                Instruction(
                    f"pair_{p}{a}{p}{b}",
                    ((Var(vid), PauliString(((a, p), (b, p)))),),
                )
            )
    return AAIS(
        n_sites=n_sites,
        variables=tuple(variables),
        instructions=tuple(instructions),
        t_machine_max=t_machine_max,
        name=f"heisenberg_{n_sites}",
    )


def simulator_terms(aais: AAIS, values: Mapping[str, float]) -> list[WeightedTerm]:
    """Instantaneous simulator Hamiltonian at a full variable assignment."""
    terms = [
        WeightedTerm(eval_expr(expr, values), string)
        for instr in aais.instructions
        for expr, string in instr.effects
    ]
    canon, _ = canonicalize(terms)
    return canon


# ---------------------------------------------------------------------------
# JSON I/O


def aais_from_dict(data: Mapping[str, object]) -> AAIS:
    preset = data.get("preset")
    if preset == "rydberg":
        raw = data.get("bounds", {})
        if not isinstance(raw, Mapping):
            raise InvalidInputError("'bounds' must be an object")
        defaults = DeviceBounds()
        bounds = DeviceBounds(
            delta_max=float(raw.get("delta_max", defaults.delta_max)),
            omega_max=float(raw.get("omega_max", defaults.omega_max)),
            phi_bounds=tuple(raw.get("phi_bounds", defaults.phi_bounds)),  # type: ignore[arg-type]
            position_max=float(raw.get("position_max", defaults.position_max)),
            min_separation=float(raw.get("min_separation", defaults.min_separation)),
            t_machine_max=(
                None if raw.get("t_machine_max", defaults.t_machine_max) is None
                else float(raw.get("t_machine_max", defaults.t_machine_max))  # type: ignore[arg-type]
            ),
        )
        return build_rydberg_aais(
            int(data["n_sites"]),  # type: ignore[arg-type]
            dims=int(data.get("dims", 1)),  # type: ignore[arg-type]
            bounds=bounds,
            shared_controls=bool(data.get("shared_controls", False)),
        )
    if preset == "heisenberg":
        edges = [tuple(e) for e in data.get("edges", [])]  # type: ignore[union-attr]
        return build_heisenberg_aais(
            int(data["n_sites"]),  # type: ignore[arg-type]
            edges,  # type: ignore[arg-type]
            amplitude_max=float(data.get("amplitude_max", 20.0)),  # type: ignore[arg-type]
            t_machine_max=(
                None if data.get("t_machine_max") is None else float(data["t_machine_max"])  # type: ignore[arg-type]
            ),
        )
    if preset is not None:
        raise InvalidInputError(f"unknown AAIS preset {preset!r}")

    try:
        variables = tuple(
            AmplitudeVariable(
                id=str(v["id"]),
                kind=str(v["kind"]),
                time_critical=bool(v.get("time_critical", False)),
                bounds=(float(v["bounds"][0]), float(v["bounds"][1])),
                unit=str(v.get("unit", "rad_per_us")),
                share_group=v.get("share_group"),
            )
            for v in data["variables"]  # type: ignore[union-attr]
        )
        instructions = []
        for ins in data["instructions"]:  # type: ignore[union-attr]
            effects = tuple(
                (parse_expr(eff["expr"]), PauliString.from_map({int(q): str(p) for q, p in eff["paulis"].items()}))
                for eff in ins["effects"]
            )
            instructions.append(Instruction(str(ins["name"]), effects))
    except (KeyError, TypeError, IndexError) as exc:
        raise InvalidInputError(f"malformed AAIS file: {exc}") from exc
    geometry = GeometryConstraints()
    if "geometry" in data:
        g = data["geometry"]
        geometry = GeometryConstraints(
            sites=tuple(tuple(s) for s in g.get("sites", ())),  # type: ignore[union-attr]
            min_separation=float(g.get("min_separation", 0.0)),  # type: ignore[union-attr]
        )
    return AAIS(
        n_sites=int(data["n_sites"]),  # type: ignore[arg-type]
        variables=variables,
        instructions=tuple(instructions),
        t_machine_max=(None if data.get("t_machine_max") is None else float(data["t_machine_max"])),  # type: ignore[arg-type]
        geometry=geometry,
        name=str(data.get("name", "")),
    )


def aais_to_dict(aais: AAIS) -> dict:
    return {
        "format_version": 1,
        "name": aais.name,
        "n_sites": aais.n_sites,
        "t_machine_max": aais.t_machine_max,
        "variables": [
            {
                "id": v.id,
                "kind": v.kind,
                "time_critical": v.time_critical,
                "bounds": list(v.bounds),
                "unit": v.unit,
                "share_group": v.share_group,
            }
            for v in aais.variables
        ],
        "instructions": [
            {
                "name": ins.name,
                "effects": [
                    {"expr": serialize_expr(expr), "paulis": {str(q): p for q, p in s.ops}}
                    for expr, s in ins.effects
                ],
            }
            for ins in aais.instructions
        ],
        "geometry": {
            "sites": [list(s) for s in aais.geometry.sites],
            "min_separation": aais.geometry.min_separation,
        },
    }


def load_aais(path: str) -> AAIS:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: AAIS file must contain a JSON object")
    return aais_from_dict(data)
