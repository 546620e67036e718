"""pulseforge: compile Pauli-sum Hamiltonians onto analog quantum simulators."""

from .aais import (
    AAIS,
    AmplitudeVariable,
    DeviceBounds,
    Instruction,
    build_heisenberg_aais,
    build_rydberg_aais,
    load_aais,
)
from .bench import BenchmarkSpec, generate, run_suite
from .eqbuild import (
    GlobalLinearSystem,
    LocalSystem,
    SynthesizedVariable,
    build_global_linear,
    connected_components,
    extract_synthesized,
)
from .errors import (
    CompilerError,
    InfeasibleError,
    InvalidInputError,
    NumericalFailureError,
    SchedulingInfeasibleError,
)
from .expr import eval_expr, eval_gradient, parse_expr, serialize_expr
from .hamiltonian import (
    PauliString,
    PiecewiseTarget,
    TargetHamiltonian,
    WeightedTerm,
    canonicalize,
    load_target,
    pauli,
    target_vector,
)
from .report import CompilationReport, achieved_vector, error_bound, error_metrics
from .solve import (
    CompileOptions,
    LinearSolution,
    LocalSolution,
    PulseSchedule,
    choose_t_sim,
    compile_piecewise,
    compile_target,
    local_min_time,
    resolve_dynamic,
    schedule_from_dict,
    schedule_to_dict,
    solve_fixed_vars,
    solve_global_linear,
)
from .verify import (
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

__version__ = "0.1.0"
