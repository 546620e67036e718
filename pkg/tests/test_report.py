import math

import numpy as np
import pytest

from pulseforge.aais import build_heisenberg_aais, build_rydberg_aais
from pulseforge.eqbuild import build_global_linear, extract_synthesized
from pulseforge.hamiltonian import TargetHamiltonian, WeightedTerm, pauli
from pulseforge.report import (
    achieved_vector,
    error_bound,
    error_metrics,
    format_report_table,
)
from pulseforge.solve import CompileOptions, PulseSchedule, ScheduleSegment, compile_target


class TestErrorMetrics:
    def test_exact_match(self):
        assert error_metrics(np.array([1.0, 0.0]), np.array([1.0, 0.0])) == (0.0, 0.0)

    def test_arithmetic(self):
        e, rel = error_metrics(np.array([1.1, 0.0]), np.array([1.0, 0.0]))
        assert e == pytest.approx(0.1)
        assert rel == pytest.approx(10.0)

    def test_zero_target_undefined(self):
        e, rel = error_metrics(np.array([0.5]), np.array([0.0]))
        assert e == pytest.approx(0.5)
        assert math.isnan(rel)
        e0, rel0 = error_metrics(np.array([0.0]), np.array([0.0]))
        assert (e0, rel0) == (0.0, 0.0)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.normal(size=6), rng.normal(size=6)
            assert error_metrics(a, b)[0] == pytest.approx(error_metrics(b, a)[0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            error_metrics(np.zeros(2), np.zeros(3))


class TestBound:
    def test_zero_when_exact(self):
        assert error_bound(3.0, 0.0, [0.0, 0.0]) == 0.0

    def test_formula(self):
        assert error_bound(3.0, 0.25, [0.1, 0.2]) == pytest.approx(3.0 * 0.3 + 0.25)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            error_bound(1.0, -0.1, [0.0])

    def test_column_norm_of_worked_matrix(self):
        aais = build_rydberg_aais(3)
        target = TargetHamiltonian(
            3,
            tuple(
                [WeightedTerm(1.0, pauli("Z0 Z1")), WeightedTerm(1.0, pauli("Z1 Z2"))]
                + [WeightedTerm(1.0, pauli(f"X{i}")) for i in range(3)]
            ),
            1.0,
        )
        synths, inc = extract_synthesized(aais, target)
        sys = build_global_linear(synths, inc, target)
        # each pair column touches Z_i, Z_j, Z_iZ_j with entries +-1
        assert sys.norm1() == 3.0


class TestAchievedVector:
    def test_linear_in_segment_durations(self):
        aais = build_rydberg_aais(2)
        target = TargetHamiltonian(2, (WeightedTerm(1.0, pauli("X0")),), 1.0)
        synths, inc = extract_synthesized(aais, target)
        sys = build_global_linear(synths, inc, target)
        values = {"Delta_0": 1.0, "Delta_1": 0.0, "Omega_0": 2.0, "Omega_1": 0.0,
                  "phi_0": 0.0, "phi_1": 0.0}
        fixed = {"x_0": 0.0, "x_1": 20.0}

        def sched(ts):
            return PulseSchedule(fixed, tuple(ScheduleSegment(t, values) for t in ts))

        single = achieved_vector(sched([0.5]), sys)
        double = achieved_vector(sched([0.5, 0.5]), sys)
        assert np.allclose(double, 2 * single)

    def test_bound_holds_on_compilations(self):
        rng = np.random.default_rng(4)
        for trial in range(8):
            n = int(rng.integers(2, 5))
            terms = [WeightedTerm(float(rng.uniform(0.1, 1.0)), pauli(f"Z{i} Z{i+1}")) for i in range(n - 1)]
            terms += [WeightedTerm(float(rng.uniform(-1, 1)), pauli(f"X{i}")) for i in range(n)]
            target = TargetHamiltonian(n, tuple(terms), 1.0)
            aais = build_rydberg_aais(n)
            _, rep = compile_target(target, aais, CompileOptions(seed=trial))
            assert rep.error_l1 <= rep.bound + 1e-7

    def test_zero_schedule_gives_zero_vector(self):
        aais = build_rydberg_aais(2)
        target = TargetHamiltonian(2, (WeightedTerm(1.0, pauli("X0")),), 1.0)
        synths, inc = extract_synthesized(aais, target)
        sys = build_global_linear(synths, inc, target)
        off = {"Delta_0": 0.0, "Delta_1": 0.0, "Omega_0": 0.0, "Omega_1": 0.0,
               "phi_0": 0.0, "phi_1": 0.0}
        sched = PulseSchedule({"x_0": 0.0, "x_1": 75.0}, (ScheduleSegment(1.0, off),))
        b = achieved_vector(sched, sys)
        # all that remains is the van der Waals tail at 75 um, ~1.2e-6
        assert np.abs(b).max() < 1e-5

    def test_heisenberg_exact_vector(self):
        target = TargetHamiltonian(
            2, (WeightedTerm(1.0, pauli("X0 X1")), WeightedTerm(-0.3, pauli("Y0"))), 1.0
        )
        aais = build_heisenberg_aais(2, [(0, 1)])
        schedule, rep = compile_target(target, aais)
        assert np.allclose(rep.b_sim, rep.b_tar, atol=1e-10)


class TestRendering:
    def test_table_contains_key_fields(self):
        aais = build_rydberg_aais(2)
        target = TargetHamiltonian(2, (WeightedTerm(1.0, pauli("X0")),), 1.0)
        _, rep = compile_target(target, aais)
        text = format_report_table(rep.to_dict())
        assert "error E" in text
        assert "relative error" in text
        assert "bound" in text

    def test_to_dict_nan_becomes_none(self):
        aais = build_rydberg_aais(2)
        # zero target: relative error undefined when E > 0
        target = TargetHamiltonian(2, (WeightedTerm(1e-12, pauli("Y0 Y1")),), 1.0)
        _, rep = compile_target(target, aais)
        d = rep.to_dict()
        assert d["relative_error_pct"] is None or isinstance(d["relative_error_pct"], float)
