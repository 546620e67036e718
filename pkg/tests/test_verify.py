import math

import numpy as np
import pytest

from pulseforge.aais import build_heisenberg_aais, build_rydberg_aais
from pulseforge.errors import InvalidInputError, SizeLimitError
from pulseforge.hamiltonian import TargetHamiltonian, WeightedTerm, pauli
from pulseforge.solve import CompileOptions, compile_target
from pulseforge.verify import (
    basis_state,
    brute_force_compile,
    build_dense,
    evolve,
    evolve_rk4,
    fidelity,
    observables,
    simulate_schedule,
    target_evolution,
)


def wt(c, s):
    return WeightedTerm(c, pauli(s))


class TestBuildDense:
    def test_single_z(self):
        h = build_dense([wt(1.0, "Z0")], 1)
        assert np.allclose(h, np.diag([1.0, -1.0]))

    def test_zz(self):
        h = build_dense([wt(1.0, "Z0 Z1")], 2)
        assert np.allclose(h, np.diag([1.0, -1.0, -1.0, 1.0]))

    def test_hermitian_for_models(self):
        from pulseforge.bench import BenchmarkSpec, generate

        for model in ("ising_chain", "ising_cycle", "kitaev", "ising_cycle_plus", "heis_chain", "pxp"):
            target = generate(BenchmarkSpec(model, 4))
            h = build_dense(target.terms, 4)
            assert np.max(np.abs(h - h.conj().T)) < 1e-12

    def test_size_limit(self):
        with pytest.raises(SizeLimitError):
            build_dense([wt(1.0, "Z0")], 13)


class TestEvolve:
    def test_t_zero(self):
        psi = basis_state(2, "plus")
        h = build_dense([wt(1.0, "Z0")], 2)
        assert np.allclose(evolve(h, 0.0, psi), psi)

    def test_phase_flip_closed_form(self):
        # exp(-i Z pi/2) maps |+> to |-> up to global phase
        h = build_dense([wt(1.0, "Z0")], 1)
        plus = np.array([1.0, 1.0]) / math.sqrt(2)
        minus = np.array([1.0, -1.0]) / math.sqrt(2)
        out = evolve(h, math.pi / 2, plus)
        assert fidelity(out, minus) == pytest.approx(1.0, abs=1e-12)

    def test_norm_preserved_random(self):
        # 1000 random (H, psi, t) cases across 1-3 qubits
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(1, 4))
            dim = 2**n
            terms = [wt(float(rng.normal()), f"Z{i}") for i in range(n)]
            terms += [wt(float(rng.normal()), f"X{i}") for i in range(n)]
            h = build_dense(terms, n)
            for _ in range(10):
                psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
                psi /= np.linalg.norm(psi)
                out = evolve(h, float(rng.uniform(0, 3)), psi)
                assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-9)

    def test_non_hermitian_rejected(self):
        h = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
        with pytest.raises(InvalidInputError):
            evolve(h, 1.0, np.array([1.0, 0.0], dtype=complex))

    def test_cross_method_agreement(self):
        from pulseforge.bench import BenchmarkSpec, generate

        for model in ("ising_chain", "ising_cycle", "kitaev", "ising_cycle_plus", "heis_chain", "pxp"):
            target = generate(BenchmarkSpec(model, 4))
            h = build_dense(target.terms, 4)
            psi0 = basis_state(4, "plus")
            a = evolve(h, target.t_target, psi0)
            b = evolve_rk4(h, target.t_target, psi0)
            assert np.max(np.abs(a - b)) < 1e-6

    def test_observable_curves_cross_check(self):
        # Z/ZZ averages over a sweep of evolution times agree between the
        # eigendecomposition evolver and the fixed-step integrator
        from pulseforge.bench import BenchmarkSpec, generate

        target = generate(BenchmarkSpec("ising_cycle", 6))
        h = build_dense(target.terms, 6)
        psi0 = basis_state(6, "zeros")
        for t in (0.5, 0.75, 1.0):
            za, zza = observables(evolve(h, t, psi0), 6, cyclic=True)
            zb, zzb = observables(evolve_rk4(h, t, psi0), 6, cyclic=True)
            assert za == pytest.approx(zb, abs=1e-6)
            assert zza == pytest.approx(zzb, abs=1e-6)


class TestSimulateSchedule:
    def test_exact_heisenberg_schedule_reproduces_target(self):
        target = TargetHamiltonian(
            2, (wt(1.0, "X0 X1"), wt(0.7, "Z0"), wt(-0.4, "Y1")), 1.0
        )
        aais = build_heisenberg_aais(2, [(0, 1)])
        schedule, rep = compile_target(target, aais)
        psi0 = basis_state(2, "zeros")
        psi_sim = simulate_schedule(schedule, aais, psi0)
        psi_tar = target_evolution(target, psi0)
        assert fidelity(psi_sim, psi_tar) >= 1 - 1e-9

    def test_zero_length_schedule_is_identity(self):
        from pulseforge.solve import PulseSchedule

        aais = build_heisenberg_aais(2, [(0, 1)])
        psi0 = basis_state(2, "plus")
        sched = PulseSchedule({}, ())
        assert np.allclose(simulate_schedule(sched, aais, psi0), psi0)

    def test_worked_rydberg_fidelity(self):
        terms = [wt(1.0, "Z0 Z1"), wt(1.0, "Z1 Z2")] + [wt(1.0, f"X{i}") for i in range(3)]
        target = TargetHamiltonian(3, tuple(terms), 1.0)
        aais = build_rydberg_aais(3)
        schedule, rep = compile_target(target, aais)
        assert rep.relative_error_pct < 0.5
        psi0 = basis_state(3, "zeros")
        psi_sim = simulate_schedule(schedule, aais, psi0)
        psi_tar = target_evolution(target, psi0)
        assert fidelity(psi_sim, psi_tar) >= 0.999


class TestObservables:
    def test_all_zeros_state(self):
        psi = basis_state(3, "zeros")
        z, zz = observables(psi, 3)
        assert z == pytest.approx(1.0)
        assert zz == pytest.approx(1.0)

    def test_plus_state(self):
        psi = basis_state(3, "plus")
        z, zz = observables(psi, 3)
        assert z == pytest.approx(0.0, abs=1e-12)
        assert zz == pytest.approx(0.0, abs=1e-12)

    def test_cyclic_vs_open(self):
        # |001>: Z values (1, 1, -1)
        psi = np.zeros(8, dtype=complex)
        psi[1] = 1.0
        z, zz_open = observables(psi, 3)
        assert z == pytest.approx(1.0 / 3.0)
        assert zz_open == pytest.approx((1.0 - 1.0) / 2.0)
        _, zz_cyc = observables(psi, 3, cyclic=True)
        assert zz_cyc == pytest.approx((1.0 - 1.0 - 1.0) / 3.0)


class TestBruteForce:
    def test_heisenberg_exact(self):
        target = TargetHamiltonian(2, (wt(1.0, "X0 X1"), wt(0.5, "Z0")), 1.0)
        aais = build_heisenberg_aais(2, [(0, 1)])
        _, rep = brute_force_compile(target, aais, seed=0)
        assert rep.error_l1 < 1e-6

    def test_worked_example_close_to_pipeline(self):
        terms = [wt(1.0, "Z0 Z1"), wt(1.0, "Z1 Z2")] + [wt(1.0, f"X{i}") for i in range(3)]
        target = TargetHamiltonian(3, tuple(terms), 1.0)
        aais = build_rydberg_aais(3)
        _, rep_pipe = compile_target(target, aais, CompileOptions(seed=0))
        _, rep_brute = brute_force_compile(target, aais, seed=0)
        assert rep_pipe.error_l1 <= rep_brute.error_l1 * 1.1 + 1e-6
