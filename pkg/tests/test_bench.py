import pytest

from pulseforge.bench import (
    BenchmarkSpec,
    default_aais_for,
    generate,
    run_suite,
    suite_to_csv,
    suite_to_json,
)
from pulseforge.errors import InvalidInputError
from pulseforge.hamiltonian import PiecewiseTarget, pauli
from pulseforge.solve import CompileOptions


def coeffs(target):
    return {t.string: t.coeff for t in target.terms}


class TestGenerate:
    def test_ising_chain_matches_worked_target(self):
        target = generate(BenchmarkSpec("ising_chain", 3))
        c = coeffs(target)
        assert c == {
            pauli("Z0 Z1"): 1.0,
            pauli("Z1 Z2"): 1.0,
            pauli("X0"): 1.0,
            pauli("X1"): 1.0,
            pauli("X2"): 1.0,
        }
        assert target.t_target == 1.0

    def test_cycle_closure(self):
        c = coeffs(generate(BenchmarkSpec("ising_cycle", 3)))
        assert pauli("Z0 Z2") in c

    def test_term_counts(self):
        for n in (3, 5, 8):
            chain = generate(BenchmarkSpec("ising_chain", n))
            assert len(chain.terms) == 2 * n - 1
            cycle = generate(BenchmarkSpec("ising_cycle", n))
            assert len(cycle.terms) == 2 * n

    def test_cycle_plus_next_nearest_coefficient(self):
        c = coeffs(generate(BenchmarkSpec("ising_cycle_plus", 6)))
        assert c[pauli("Z0 Z2")] == pytest.approx(1.0 / 64.0)
        assert c[pauli("Z0 Z1")] == pytest.approx(1.0)

    def test_kitaev_signs(self):
        c = coeffs(generate(BenchmarkSpec("kitaev", 3)))
        assert c[pauli("Z0 Z1")] == pytest.approx(0.5)
        assert c[pauli("X0")] == pytest.approx(-1.0)
        assert c[pauli("Z0")] == pytest.approx(-1.0)

    def test_heis_chain_terms(self):
        c = coeffs(generate(BenchmarkSpec("heis_chain", 3)))
        for op in ("X", "Y", "Z"):
            assert c[pauli(f"{op}0 {op}1")] == pytest.approx(1.0)
        assert c[pauli("X0")] == pytest.approx(1.0)

    def test_pxp_expansion(self):
        # J n_i n_{i+1} + h X_i with J = h = 1
        c = coeffs(generate(BenchmarkSpec("pxp", 3)))
        assert c[pauli("Z0 Z1")] == pytest.approx(0.25)
        assert c[pauli("Z0")] == pytest.approx(-0.25)
        assert c[pauli("Z1")] == pytest.approx(-0.5)  # interior site: two pairs
        assert c[pauli("X0")] == pytest.approx(1.0)

    def test_mis_chain_segments_and_midpoints(self):
        target = generate(BenchmarkSpec("mis_chain", 3, segments=4))
        assert isinstance(target, PiecewiseTarget)
        assert len(target.segments) == 4
        assert target.total_duration() == pytest.approx(1.0)
        # detuning coefficient tracks (1 - 2 t) U at segment midpoints
        first = {t.string: t.coeff for t in target.segments[0][1]}
        # site 0: -(1-2*0.125)/2 from the anneal term, -1/4 from the pair term
        assert first[pauli("Z0")] == pytest.approx(-(1 - 0.25) / 2 - 0.25)
        last = {t.string: t.coeff for t in target.segments[3][1]}
        assert last[pauli("Z0")] == pytest.approx(+(0.75) / 2 - 0.25)

    def test_mis_single_segment_is_midpoint_average(self):
        target = generate(BenchmarkSpec("mis_chain", 3, segments=1))
        seg = {t.string: t.coeff for t in target.segments[0][1]}
        # midpoint t = 0.5 kills the anneal detuning, leaving the pair part
        assert seg[pauli("Z0")] == pytest.approx(-0.25)

    def test_spec_validation(self):
        with pytest.raises(InvalidInputError):
            BenchmarkSpec("ising_chain", 1)
        with pytest.raises(InvalidInputError):
            BenchmarkSpec("mis_chain", 4)
        with pytest.raises(InvalidInputError):
            BenchmarkSpec("ising_chain", 4, segments=2)
        with pytest.raises(InvalidInputError):
            BenchmarkSpec("hubbard", 4)


class TestDefaultAais:
    def test_heisenberg_edges_cover_target(self):
        spec = BenchmarkSpec("ising_cycle_plus", 6)
        target = generate(spec)
        aais = default_aais_for(spec, "heisenberg", target)
        names = {i.name for i in aais.instructions}
        assert "pair_Z0Z1" in names and "pair_Z0Z2" in names

    def test_rydberg_box_scales(self):
        aais = default_aais_for(BenchmarkSpec("ising_cycle", 40), "rydberg")
        assert aais.var("x_0").hi >= 400.0


class TestSuite:
    def test_runs_and_serializes(self):
        rows = run_suite(["ising_chain", "heis_chain"], [2, 3], "heisenberg", CompileOptions())
        assert len(rows) == 4
        assert all(r.status == "ok" for r in rows)
        assert all(r.relative_error_pct < 1e-9 for r in rows)
        csv_text = suite_to_csv(rows)
        assert csv_text.splitlines()[0].startswith("model,n,aais")
        assert len(csv_text.splitlines()) == 5
        assert '"results"' in suite_to_json(rows)

    def test_failures_recorded_not_raised(self, monkeypatch):
        import pulseforge.bench as bench_mod
        from pulseforge.errors import InfeasibleError

        real_compile = bench_mod.compile_target

        def flaky(target, aais, options):
            if target.n_qubits == 3:
                raise InfeasibleError("synthetic failure")
            return real_compile(target, aais, options)

        monkeypatch.setattr(bench_mod, "compile_target", flaky)
        rows = run_suite(["ising_chain"], [2, 3], "heisenberg", CompileOptions())
        assert rows[0].status == "ok"
        assert rows[1].status.startswith("error:")
        # the failed cell still serializes
        assert "synthetic failure" in suite_to_csv(rows)

    def test_kitaev_bottleneck_closed_form(self):
        rows = run_suite(["kitaev"], [4], "heisenberg", CompileOptions())
        # largest phase: |mu/2 * t_target| = 0.5, |t|, |h| = 1 -> t = 1/20
        assert rows[0].t_machine_us == pytest.approx(1.0 / 20.0, rel=1e-9)
        rows_r = run_suite(["kitaev"], [4], "rydberg", CompileOptions())
        # Rabi bottleneck: u = 2|B_X| = 2 over omega_max 2.5
        assert rows_r[0].t_machine_us == pytest.approx(0.8, rel=1e-6)
