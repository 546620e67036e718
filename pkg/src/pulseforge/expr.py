"""Symbolic scalar expressions over named amplitude variables.

The node set is deliberately small: Const, Var, Sum, Product, Power (integer
exponent), Cos, Sin and AbsDiff.  Instruction amplitudes, synthesized-variable
definitions and solver residuals are all trees in this language.  Evaluation
and differentiation are exact recursive walks; `value_and_gradient` is the
single entry point the nonlinear solvers rely on for Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InvalidInputError, MissingBindingError, SingularityError

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Sum",
    "Product",
    "Power",
    "Cos",
    "Sin",
    "AbsDiff",
    "eval_expr",
    "eval_gradient",
    "value_and_gradient",
    "free_vars",
    "split_constant",
    "simplify_product",
    "parse_expr",
    "serialize_expr",
]


@dataclass(frozen=True)
class Expr:
    """Base class; concrete nodes below."""


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Sum(Expr):
    children: tuple[Expr, ...]


@dataclass(frozen=True)
class Product(Expr):
    children: tuple[Expr, ...]


@dataclass(frozen=True)
class Power(Expr):
    base: Expr
    exponent: int


@dataclass(frozen=True)
class Cos(Expr):
    child: Expr


@dataclass(frozen=True)
class Sin(Expr):
    child: Expr


@dataclass(frozen=True)
class AbsDiff(Expr):
    """|a - b|; differentiable except on the tie a == b."""

    a: Expr
    b: Expr


def free_vars(e: Expr) -> frozenset[str]:
    """Names of all variables referenced anywhere in the tree."""
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Sum, Product)):
        out: frozenset[str] = frozenset()
        for c in e.children:
            out |= free_vars(c)
        return out
    if isinstance(e, Power):
        return free_vars(e.base)
    if isinstance(e, (Cos, Sin)):
        return free_vars(e.child)
    if isinstance(e, AbsDiff):
        return free_vars(e.a) | free_vars(e.b)
    raise TypeError(f"unknown expression node {type(e).__name__}")


def eval_expr(e: Expr, assignment: Mapping[str, float]) -> float:
    """Numeric value of `e` at the given variable assignment."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(assignment[e.name])
        except KeyError:
            raise MissingBindingError(f"variable '{e.name}' has no assigned value") from None
    if isinstance(e, Sum):
        return sum(eval_expr(c, assignment) for c in e.children)
    if isinstance(e, Product):
        out = 1.0
        for c in e.children:
            out *= eval_expr(c, assignment)
        return out
    if isinstance(e, Power):
        base = eval_expr(e.base, assignment)
        if e.exponent < 0 and base == 0.0:
            raise SingularityError("negative-exponent power evaluated at zero base")
        return base**e.exponent
    if isinstance(e, Cos):
        return math.cos(eval_expr(e.child, assignment))
    if isinstance(e, Sin):
        return math.sin(eval_expr(e.child, assignment))
    if isinstance(e, AbsDiff):
        return abs(eval_expr(e.a, assignment) - eval_expr(e.b, assignment))
    raise TypeError(f"unknown expression node {type(e).__name__}")


def value_and_gradient(
    e: Expr, assignment: Mapping[str, float]
) -> tuple[float, dict[str, float], bool]:
    """Value, exact partials per variable, and a smoothness flag.

    The flag is False when evaluation crossed an AbsDiff tie (a == b), where
    the returned partials are a valid subgradient (0 for that node).
    """
    if isinstance(e, Const):
        return e.value, {}, True
    if isinstance(e, Var):
        try:
            v = float(assignment[e.name])
        except KeyError:
            raise MissingBindingError(f"variable '{e.name}' has no assigned value") from None
        return v, {e.name: 1.0}, True
    if isinstance(e, Sum):
        total = 0.0
        grad: dict[str, float] = {}
        smooth = True
        for c in e.children:
            v, g, s = value_and_gradient(c, assignment)
            total += v
            smooth = smooth and s
            for k, gv in g.items():
                grad[k] = grad.get(k, 0.0) + gv
        return total, grad, smooth
    if isinstance(e, Product):
        vals = []
        grads = []
        smooth = True
        for c in e.children:
            v, g, s = value_and_gradient(c, assignment)
            vals.append(v)
            grads.append(g)
            smooth = smooth and s
        total = 1.0
        for v in vals:
            total *= v
        grad = {}
        for i, g in enumerate(grads):
            # product of all factors except i
            rest = 1.0
            for j, v in enumerate(vals):
                if j != i:
                    rest *= v
            for k, gv in g.items():
                grad[k] = grad.get(k, 0.0) + gv * rest
        return total, grad, smooth
    if isinstance(e, Power):
        v, g, s = value_and_gradient(e.base, assignment)
        if e.exponent < 0 and v == 0.0:
            raise SingularityError("negative-exponent power evaluated at zero base")
        val = v**e.exponent
        scale = e.exponent * v ** (e.exponent - 1) if e.exponent != 0 else 0.0
        return val, {k: gv * scale for k, gv in g.items()}, s
    if isinstance(e, Cos):
        v, g, s = value_and_gradient(e.child, assignment)
        scale = -math.sin(v)
        return math.cos(v), {k: gv * scale for k, gv in g.items()}, s
    if isinstance(e, Sin):
        v, g, s = value_and_gradient(e.child, assignment)
        scale = math.cos(v)
        return math.sin(v), {k: gv * scale for k, gv in g.items()}, s
    if isinstance(e, AbsDiff):
        va, ga, sa = value_and_gradient(e.a, assignment)
        vb, gb, sb = value_and_gradient(e.b, assignment)
        diff = va - vb
        if diff == 0.0:
            # subgradient 0 at the tie; flag non-smooth
            return 0.0, {k: 0.0 for k in set(ga) | set(gb)}, False
        sgn = 1.0 if diff > 0 else -1.0
        grad = {k: gv * sgn for k, gv in ga.items()}
        for k, gv in gb.items():
            grad[k] = grad.get(k, 0.0) - gv * sgn
        return abs(diff), grad, sa and sb
    raise TypeError(f"unknown expression node {type(e).__name__}")


def eval_gradient(e: Expr, assignment: Mapping[str, float]) -> dict[str, float]:
    """Exact partial derivatives of `e` with respect to every referenced variable."""
    _, grad, _ = value_and_gradient(e, assignment)
    for name in free_vars(e):
        grad.setdefault(name, 0.0)
    return grad


# ---------------------------------------------------------------------------
# structural helpers for synthesized-variable extraction


def _sort_key(e: Expr) -> str:
    return serialize_str(e)


def simplify_product(children: Iterable[Expr]) -> Expr:
    """Flatten nested products, fold constants, drop unit factors."""
    const = 1.0
    rest: list[Expr] = []

    def visit(node: Expr) -> None:
        nonlocal const
        if isinstance(node, Const):
            const *= node.value
        elif isinstance(node, Product):
            for c in node.children:
                visit(c)
        else:
            rest.append(node)

    for c in children:
        visit(c)
    rest.sort(key=_sort_key)
    if const == 0.0:
        return Const(0.0)
    if not rest:
        return Const(const)
    if const != 1.0:
        rest = [Const(const)] + rest
    if len(rest) == 1:
        return rest[0]
    return Product(tuple(rest))


def split_constant(e: Expr) -> tuple[float, Expr]:
    """Factor `e` into (constant, core) with the core free of leading constants.

    Only top-level Product/Const structure is hoisted; a pure constant yields
    core Const(1.0).  Cores are canonically ordered so that structural equality
    detects expressions identical up to a constant multiple.
    """
    flat = simplify_product([e])
    if isinstance(flat, Const):
        return flat.value, Const(1.0)
    if isinstance(flat, Product) and isinstance(flat.children[0], Const):
        const = flat.children[0].value
        rest = flat.children[1:]
        core = rest[0] if len(rest) == 1 else Product(rest)
        return const, core
    return 1.0, flat


# ---------------------------------------------------------------------------
# prefix-notation (de)serialization used by AAIS spec files and debug dumps
#
# Grammar over JSON values:
#   number               -> Const
#   "name"               -> Var
#   ["+", e1, e2, ...]   -> Sum
#   ["*", e1, e2, ...]   -> Product
#   ["pow", e, k]        -> Power (k a JSON integer)
#   ["cos", e] ["sin", e]-> Cos / Sin
#   ["absdiff", a, b]    -> AbsDiff

_HEADS = {"+", "*", "pow", "cos", "sin", "absdiff"}


def parse_expr(obj: object) -> Expr:
    """Build an Expr from its prefix-notation JSON form."""
    if isinstance(obj, bool):
        raise InvalidInputError(f"invalid expression literal {obj!r}")
    if isinstance(obj, (int, float)):
        return Const(float(obj))
    if isinstance(obj, str):
        return Var(obj)
    if not isinstance(obj, (list, tuple)) or not obj:
        raise InvalidInputError(f"invalid expression fragment {obj!r}")
    head = obj[0]
    args = obj[1:]
    if head == "+":
        if not args:
            raise InvalidInputError("'+' needs at least one operand")
        return Sum(tuple(parse_expr(a) for a in args))
    if head == "*":
        if not args:
            raise InvalidInputError("'*' needs at least one operand")
        return Product(tuple(parse_expr(a) for a in args))
    if head == "pow":
        if len(args) != 2 or not isinstance(args[1], int) or isinstance(args[1], bool):
            raise InvalidInputError("'pow' takes (base, integer exponent)")
        return Power(parse_expr(args[0]), args[1])
    if head == "cos":
        if len(args) != 1:
            raise InvalidInputError("'cos' takes one operand")
        return Cos(parse_expr(args[0]))
    if head == "sin":
        if len(args) != 1:
            raise InvalidInputError("'sin' takes one operand")
        return Sin(parse_expr(args[0]))
    if head == "absdiff":
        if len(args) != 2:
            raise InvalidInputError("'absdiff' takes two operands")
        return AbsDiff(parse_expr(args[0]), parse_expr(args[1]))
    raise InvalidInputError(f"unknown expression operator {head!r} (expected one of {sorted(_HEADS)})")


def serialize_expr(e: Expr) -> object:
    """Inverse of parse_expr."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Sum):
        return ["+"] + [serialize_expr(c) for c in e.children]
    if isinstance(e, Product):
        return ["*"] + [serialize_expr(c) for c in e.children]
    if isinstance(e, Power):
        return ["pow", serialize_expr(e.base), e.exponent]
    if isinstance(e, Cos):
        return ["cos", serialize_expr(e.child)]
    if isinstance(e, Sin):
        return ["sin", serialize_expr(e.child)]
    if isinstance(e, AbsDiff):
        return ["absdiff", serialize_expr(e.a), serialize_expr(e.b)]
    raise TypeError(f"unknown expression node {type(e).__name__}")


def serialize_str(e: Expr) -> str:
    """Compact deterministic text form, used for sorting and debug output."""
    obj = serialize_expr(e)

    def render(o: object) -> str:
        if isinstance(o, list):
            return "(" + " ".join(render(x) for x in o) + ")"
        if isinstance(o, float):
            return repr(o)
        return str(o)

    return render(obj)
