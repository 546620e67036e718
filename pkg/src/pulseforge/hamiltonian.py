"""Pauli-sum intermediate representation for target Hamiltonians.

Coefficients are stored in angular frequency (rad/us), durations in us and
positions in um.  Input files may tag coefficients as "MHz" or "rad_per_us";
the two are numerically identical under the convention used throughout (a
quoted megahertz value is 1e6 angular units per second), so loading only
records the tag.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CompilerError, InvalidInputError

PAULI_OPS = ("X", "Y", "Z")

#: accepted unit tags -> multiplier into internal rad/us
UNIT_SCALE = {"MHz": 1.0, "rad_per_us": 1.0}


@dataclass(frozen=True)
class PauliString:
    """Sparse multi-qubit Pauli operator; the empty tuple is the identity.

    `ops` holds (qubit, op) pairs sorted by qubit index with no identities.
    """

    ops: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for q, p in self.ops:
            if not isinstance(q, int) or q < 0:
                raise InvalidInputError(f"qubit index must be a non-negative integer, got {q!r}")
            if p not in PAULI_OPS:
                raise InvalidInputError(f"Pauli operator must be one of X/Y/Z, got {p!r}")
            if q in seen:
                raise InvalidInputError(f"duplicate qubit index {q} in Pauli string")
            seen.add(q)
        if tuple(sorted(self.ops)) != self.ops:
            object.__setattr__(self, "ops", tuple(sorted(self.ops)))

    @classmethod
    def from_map(cls, factors: Mapping[int, str]) -> "PauliString":
        return cls(tuple(sorted((int(q), p) for q, p in factors.items())))

    @property
    def factors(self) -> dict[int, str]:
        return dict(self.ops)

    def is_identity(self) -> bool:
        return not self.ops

    def max_qubit(self) -> int:
        return self.ops[-1][0] if self.ops else -1

    def label(self) -> str:
        if not self.ops:
            return "I"
        return " ".join(f"{p}{q}" for q, p in self.ops)

    def __str__(self) -> str:  # pragma: no cover - debugging convenience
        return self.label()


def pauli(spec: str | Mapping[int, str]) -> PauliString:
    """Convenience constructor: pauli("Z0 Z1") or pauli({0: "Z", 1: "Z"})."""
    if isinstance(spec, Mapping):
        return PauliString.from_map(spec)
    factors = {}
    for token in spec.split():
        factors[int(token[1:])] = token[0].upper()
    return PauliString.from_map(factors)


@dataclass(frozen=True)
class WeightedTerm:
    coeff: float
    string: PauliString

    def __post_init__(self) -> None:
        if not math.isfinite(self.coeff):
            raise InvalidInputError(f"term coefficient must be finite, got {self.coeff!r}")


def canonicalize(terms: Iterable[WeightedTerm]) -> tuple[list[WeightedTerm], float]:
    """Merge duplicate strings, drop zeros, sort, split off the identity.

    Returns (canonical terms, identity coefficient).  The identity coefficient
    is an unobservable global phase rate and never enters equation systems.
    """
    acc: dict[PauliString, float] = {}
    phase = 0.0
    for t in terms:
        if t.string.is_identity():
            phase += t.coeff
        else:
            acc[t.string] = acc.get(t.string, 0.0) + t.coeff
    out = [WeightedTerm(c, s) for s, c in acc.items() if c != 0.0]
    out.sort(key=lambda t: t.string.ops)
    return out, phase


@dataclass(frozen=True)
class TargetHamiltonian:
    """Time-independent target: canonical term list plus its evolution time."""

    n_qubits: int
    terms: tuple[WeightedTerm, ...]
    t_target: float
    identity_coeff: float = 0.0
    unit: str = "rad_per_us"
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise InvalidInputError("n_qubits must be positive")
        if not (self.t_target > 0):
            raise InvalidInputError("t_target must be positive")
        canon, phase = canonicalize(self.terms)
        object.__setattr__(self, "terms", tuple(canon))
        object.__setattr__(self, "identity_coeff", self.identity_coeff + phase)
        for t in self.terms:
            if t.string.max_qubit() >= self.n_qubits:
                raise InvalidInputError(
                    f"term {t.string.label()} references qubit >= n_qubits={self.n_qubits}"
                )

    def strings(self) -> list[PauliString]:
        return [t.string for t in self.terms]


@dataclass(frozen=True)
class PiecewiseTarget:
    """Piecewise-constant target: ordered (duration, terms) segments."""

    n_qubits: int
    segments: tuple[tuple[float, tuple[WeightedTerm, ...]], ...]
    unit: str = "rad_per_us"
    name: str = ""

    def __post_init__(self) -> None:
        if self.n_qubits < 1:
            raise InvalidInputError("n_qubits must be positive")
        if not self.segments:
            raise InvalidInputError("piecewise target needs at least one segment")
        fixed = []
        for dur, terms in self.segments:
            if not (dur > 0):
                raise InvalidInputError("segment durations must be positive")
            canon, _ = canonicalize(terms)
            for t in canon:
                if t.string.max_qubit() >= self.n_qubits:
                    raise InvalidInputError(
                        f"term {t.string.label()} references qubit >= n_qubits={self.n_qubits}"
                    )
            fixed.append((float(dur), tuple(canon)))
        object.__setattr__(self, "segments", tuple(fixed))

    def segment_target(self, index: int) -> TargetHamiltonian:
        dur, terms = self.segments[index]
        return TargetHamiltonian(
            self.n_qubits, terms, dur, unit=self.unit, name=f"{self.name}[{index}]"
        )

    def total_duration(self) -> float:
        return sum(d for d, _ in self.segments)


def target_vector(target: TargetHamiltonian, term_index: Sequence[PauliString]) -> np.ndarray:
    """Per-term accumulated phase A_i * t_target over the given term ordering.

    Every target string must appear in term_index; strings present only in the
    index (simulator-only terms) get 0.
    """
    pos = {s: i for i, s in enumerate(term_index)}
    out = np.zeros(len(term_index))
    for t in target.terms:
        if t.string not in pos:
            raise CompilerError(
                f"term index is missing target string {t.string.label()}; "
                "the index was built incorrectly upstream"
            )
        out[pos[t.string]] = t.coeff * target.t_target
    return out


# ---------------------------------------------------------------------------
# JSON I/O


def _unit_scale(tag: str) -> float:
    if tag not in UNIT_SCALE:
        raise InvalidInputError(f"unknown unit tag {tag!r}; expected one of {sorted(UNIT_SCALE)}")
    return UNIT_SCALE[tag]


def _terms_from_json(raw: object, scale: float) -> list[WeightedTerm]:
    if not isinstance(raw, list):
        raise InvalidInputError("'terms' must be a list")
    out = []
    for entry in raw:
        if not isinstance(entry, dict) or "coeff" not in entry or "paulis" not in entry:
            raise InvalidInputError(f"malformed term entry {entry!r}")
        try:
            factors = {int(q): str(p) for q, p in entry["paulis"].items()}
        except (ValueError, AttributeError) as exc:
            raise InvalidInputError(f"malformed pauli map in {entry!r}") from exc
        out.append(WeightedTerm(float(entry["coeff"]) * scale, PauliString.from_map(factors)))
    return out


def target_from_dict(data: Mapping[str, object], name: str = "") -> TargetHamiltonian | PiecewiseTarget:
    if "n_qubits" not in data:
        raise InvalidInputError("target file needs 'n_qubits'")
    n = int(data["n_qubits"])  # type: ignore[arg-type]
    unit = str(data.get("unit", "rad_per_us"))
    scale = _unit_scale(unit)
    if "segments" in data:
        segs = []
        for seg in data["segments"]:  # type: ignore[union-attr]
            if not isinstance(seg, dict) or "duration" not in seg or "terms" not in seg:
                raise InvalidInputError(f"malformed segment entry {seg!r}")
            segs.append((float(seg["duration"]), tuple(_terms_from_json(seg["terms"], scale))))
        return PiecewiseTarget(n, tuple(segs), unit=unit, name=name)
    if "t_target" not in data or "terms" not in data:
        raise InvalidInputError("target file needs 't_target' and 'terms' (or 'segments')")
    return TargetHamiltonian(
        n,
        tuple(_terms_from_json(data["terms"], scale)),
        float(data["t_target"]),  # type: ignore[arg-type]
        unit=unit,
        name=name,
    )


def target_to_dict(target: TargetHamiltonian | PiecewiseTarget) -> dict:
    def terms_out(terms: Iterable[WeightedTerm]) -> list[dict]:
        return [
            {"coeff": t.coeff, "paulis": {str(q): p for q, p in t.string.ops}} for t in terms
        ]

    if isinstance(target, PiecewiseTarget):
        return {
            "format_version": 1,
            "n_qubits": target.n_qubits,
            "unit": target.unit,
            "segments": [
                {"duration": d, "terms": terms_out(terms)} for d, terms in target.segments
            ],
        }
    return {
        "format_version": 1,
        "n_qubits": target.n_qubits,
        "unit": target.unit,
        "t_target": target.t_target,
        "terms": terms_out(target.terms),
    }


def load_target(path: str) -> TargetHamiltonian | PiecewiseTarget:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: target file must contain a JSON object")
    return target_from_dict(data, name=path)
