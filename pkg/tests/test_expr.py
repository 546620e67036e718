import math

import numpy as np
import pytest

from pulseforge.errors import InvalidInputError, MissingBindingError, SingularityError
from pulseforge.expr import (
    AbsDiff,
    Const,
    Cos,
    Power,
    Product,
    Sin,
    Sum,
    Var,
    eval_expr,
    eval_gradient,
    free_vars,
    parse_expr,
    serialize_expr,
    split_constant,
    value_and_gradient,
)

RABI_X = Product((Const(0.5), Var("Omega"), Cos(Var("phi"))))
VDW = Product((Const(862690.0 / 4.0), Power(AbsDiff(Var("x1"), Var("x2")), -6)))


class TestEval:
    def test_rabi_amplitude(self):
        assert eval_expr(RABI_X, {"Omega": 2.5, "phi": 0.0}) == pytest.approx(1.25)

    def test_cos_at_zero(self):
        assert eval_expr(Cos(Var("phi")), {"phi": 0.0}) == 1.0

    def test_sixth_power_scaling(self):
        near = eval_expr(VDW, {"x1": 0.0, "x2": 7.46})
        far = eval_expr(VDW, {"x1": 0.0, "x2": 14.92})
        assert far == pytest.approx(near / 64.0, rel=1e-12)

    def test_missing_binding(self):
        with pytest.raises(MissingBindingError):
            eval_expr(RABI_X, {"Omega": 1.0})

    def test_singularity(self):
        with pytest.raises(SingularityError):
            eval_expr(VDW, {"x1": 1.0, "x2": 1.0})

    def test_sum_power_sin(self):
        e = Sum((Power(Var("a"), 2), Sin(Var("b")), Const(1.0)))
        assert eval_expr(e, {"a": 3.0, "b": math.pi / 2}) == pytest.approx(11.0)


class TestGradient:
    def test_rabi_partial(self):
        g = eval_gradient(RABI_X, {"Omega": 2.5, "phi": 0.0})
        assert g["Omega"] == pytest.approx(0.5)
        assert g["phi"] == pytest.approx(0.0)

    def test_inverse_power_rule(self):
        # widening the gap weakens the coupling: d/dx2 of k*|x1-x2|^-6 at
        # x1=0 < x2=d is -6k d^-7, and d/dx1 the opposite
        k = 862690.0 / 4.0
        d = 7.46
        g = eval_gradient(VDW, {"x1": 0.0, "x2": d})
        assert g["x2"] == pytest.approx(-6 * k * d**-7, rel=1e-12)
        assert g["x1"] == pytest.approx(6 * k * d**-7, rel=1e-12)

    def test_absdiff_tie_subgradient(self):
        val, grad, smooth = value_and_gradient(AbsDiff(Var("a"), Var("b")), {"a": 1.0, "b": 1.0})
        assert val == 0.0
        assert grad == {"a": 0.0, "b": 0.0}
        assert not smooth

    def test_matches_finite_differences(self):
        # central differences, step 1e-6, relative tolerance 1e-5, 100 points
        exprs = {
            "rabi": (RABI_X, {"Omega": (0.0, 2.5), "phi": (-math.pi, math.pi)}),
            "vdw": (VDW, {"x1": (0.0, 30.0), "x2": (31.0, 75.0)}),
            "mix": (
                Sum((Product((Var("a"), Sin(Var("b")))), Power(Sum((Var("a"), Const(2.0))), 3))),
                {"a": (-2.0, 2.0), "b": (-3.0, 3.0)},
            ),
        }
        rng = np.random.default_rng(11)
        step = 1e-6
        for name, (expr, boxes) in exprs.items():
            names = sorted(boxes)
            for _ in range(100):
                point = {
                    v: float(rng.uniform(lo + 1e-3, hi - 1e-3)) for v, (lo, hi) in boxes.items()
                }
                grad = eval_gradient(expr, point)
                for v in names:
                    plus = dict(point, **{v: point[v] + step})
                    minus = dict(point, **{v: point[v] - step})
                    fd = (eval_expr(expr, plus) - eval_expr(expr, minus)) / (2 * step)
                    scale = max(1.0, abs(fd))
                    assert abs(grad[v] - fd) <= 1e-5 * scale, (name, v, point)


class TestStructure:
    def test_free_vars(self):
        assert free_vars(VDW) == {"x1", "x2"}
        assert free_vars(Const(3.0)) == frozenset()

    def test_split_constant(self):
        c, core = split_constant(Product((Const(-0.5), Var("Omega"), Sin(Var("phi")))))
        assert c == -0.5
        # children are canonically ordered inside the core
        assert core == Product((Sin(Var("phi")), Var("Omega")))
        c2, core2 = split_constant(Const(4.0))
        assert c2 == 4.0 and core2 == Const(1.0)
        c3, core3 = split_constant(Var("a"))
        assert c3 == 1.0 and core3 == Var("a")

    def test_split_constant_nested_products(self):
        e = Product((Const(2.0), Product((Const(3.0), Var("a")))))
        c, core = split_constant(e)
        assert c == 6.0 and core == Var("a")

    def test_parse_serialize_round_trip(self):
        forms = [
            1.5,
            "Omega_0",
            ["*", 0.5, "Omega_0", ["cos", "phi_0"]],
            ["*", -215672.5, ["pow", ["absdiff", "x_0", "x_1"], -6]],
            ["+", ["pow", "a", 2], ["sin", "b"], -1.0],
        ]
        for form in forms:
            e = parse_expr(form)
            assert parse_expr(serialize_expr(e)) == e

    def test_parse_rejects_garbage(self):
        for bad in (["hypot", 1, 2], [], ["pow", "a", 1.5], True, None):
            with pytest.raises(InvalidInputError):
                parse_expr(bad)
