"""Command-line surface: compile | verify | bench | inspect.

Exit codes: 0 success, 1 compilation infeasibility, 2 invalid input,
3 internal numerical failure.  Diagnostics go to stderr; artifacts are JSON
on files or stdout.  QTURBO_THREADS caps internal parallelism (0 = auto).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench as bench_mod
from . import plotting
from .aais import load_aais
from .bench import worker_count
from .eqbuild import build_global_linear, connected_components, eqsys_to_dict, extract_synthesized
from .errors import CompilerError, InvalidInputError
from .hamiltonian import PiecewiseTarget, load_target
from .report import format_report_table
from .solve import (
    CompileOptions,
    compile_piecewise,
    compile_target,
    schedule_from_dict,
    schedule_to_dict,
)

log = logging.getLogger("pulseforge")


def _write_json(data: dict, path: str | None) -> None:
    text = json.dumps(data, indent=2, sort_keys=True)
    if path is None or path == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _options_from_args(args: argparse.Namespace) -> CompileOptions:
    return CompileOptions(
        seed=args.seed,
        refine=args.refine,
        refine_l1=args.refine_l1,
        dt_step=args.dt_step,
        emit=frozenset(args.emit or ()),
        share_groups_enforced=args.enforce_share_groups,
    )


def _cmd_compile(args: argparse.Namespace) -> int:
    target = load_target(args.target)
    aais = load_aais(args.aais)
    options = _options_from_args(args)
    if "eqsys" in options.emit:
        synths, inc = extract_synthesized(aais)
        index_target = (
            target.segment_target(0) if isinstance(target, PiecewiseTarget) else target
        )
        sys_ = build_global_linear(synths, inc, index_target)
        locals_ = connected_components(synths, aais)
        _write_json(eqsys_to_dict(sys_, locals_), _derived_path(args.output, "eqsys"))
    if isinstance(target, PiecewiseTarget):
        schedule, rep = compile_piecewise(target, aais, options)
    else:
        schedule, rep = compile_target(target, aais, options)
    payload = schedule_to_dict(schedule, rep, include_timings="timings" in options.emit)
    _write_json(payload, args.output)
    log.info(
        "compiled %s: t_machine=%.6g us, E=%.6g rad (%.4g%% relative)",
        args.target,
        schedule.total_time(),
        rep.error_l1,
        rep.relative_error_pct,
    )
    return 0


def _derived_path(output: str | None, tag: str) -> str | None:
    if output is None or output == "-":
        return None
    p = Path(output)
    return str(p.with_name(f"{p.stem}_{tag}.json"))


def _cmd_verify(args: argparse.Namespace) -> int:
    from . import verify as verify_mod

    with open(args.schedule) as fh:
        try:
            schedule_data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(
                f"{args.schedule}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    schedule = schedule_from_dict(schedule_data)
    target = load_target(args.target)
    aais = load_aais(args.aais)
    if target.n_qubits != aais.n_sites:
        raise InvalidInputError(
            f"target has {target.n_qubits} qubits but the instruction set has "
            f"{aais.n_sites} sites; verification assumes the identity mapping"
        )
    psi0 = verify_mod.basis_state(aais.n_sites, args.psi0)
    psi_sim = verify_mod.simulate_schedule(schedule, aais, psi0)
    psi_tar = verify_mod.target_evolution(target, psi0)
    out = {
        "fidelity": verify_mod.fidelity(psi_tar, psi_sim),
        "t_machine_us": schedule.total_time(),
    }
    if args.observables:
        z_sim, zz_sim = verify_mod.observables(psi_sim, aais.n_sites, cyclic=args.cyclic)
        z_tar, zz_tar = verify_mod.observables(psi_tar, aais.n_sites, cyclic=args.cyclic)
        out["observables"] = {
            "simulated": {"z_avg": z_sim, "zz_avg": zz_sim},
            "target": {"z_avg": z_tar, "zz_avg": zz_tar},
        }
    _write_json(out, args.output)
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    options = CompileOptions(seed=args.seed)
    rows = bench_mod.run_suite(models, sizes, args.aais, options, segments=args.segments)
    csv_text = bench_mod.suite_to_csv(rows)
    if args.output is None or args.output == "-":
        sys.stdout.write(csv_text)
    else:
        Path(args.output).write_text(csv_text)
        json_path = str(Path(args.output).with_suffix(".json"))
        Path(json_path).write_text(bench_mod.suite_to_json(rows) + "\n")
        if not args.no_plot:
            prefix = str(Path(args.output).with_suffix(""))
            for path in plotting.save_suite_figures(rows, prefix):
                log.info("wrote %s", path)
    failures = [r for r in rows if r.status != "ok"]
    for row in failures:
        log.warning("suite cell %s n=%d: %s", row.model, row.n, row.status)
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    with open(args.schedule) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(
                f"{args.schedule}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    report = data.get("report")
    if report:
        print(format_report_table(report))
    else:
        print("schedule carries no report block")
    print(f"fixed values: {len(data.get('fixed', {}))}")
    for i, seg in enumerate(data.get("segments", [])):
        print(f"segment {i}: t={seg['t_machine_us']:.6g} us, {len(seg['dynamic'])} dynamic values")
    if args.figure:
        path = plotting.save_schedule_figure(data, args.figure)
        print(f"figure written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulseforge",
        description="Compile Pauli-sum Hamiltonians onto analog quantum simulators.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a target onto an instruction set")
    c.add_argument("--target", required=True, help="target Hamiltonian JSON file")
    c.add_argument("--aais", required=True, help="instruction-set JSON file")
    c.add_argument("-o", "--output", default=None, help="schedule output path (default stdout)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--refine", dest="refine", action="store_true", default=True)
    c.add_argument("--no-refine", dest="refine", action="store_false")
    c.add_argument("--refine-l1", action="store_true", default=False, help="exact L1 refinement objective")
    c.add_argument("--dt-step", type=float, default=None, help="time relaxation step (us)")
    c.add_argument("--emit", action="append", choices=["eqsys", "timings"], default=None)
    c.add_argument("--enforce-share-groups", action="store_true", default=False)
    c.set_defaults(func=_cmd_compile)

    v = sub.add_parser("verify", help="simulate a schedule against its target")
    v.add_argument("--schedule", required=True)
    v.add_argument("--target", required=True)
    v.add_argument("--aais", required=True)
    v.add_argument("--psi0", choices=["zeros", "plus"], default="zeros")
    v.add_argument("--observables", action="store_true", default=False)
    v.add_argument("--cyclic", action="store_true", default=False, help="wrap ZZ pairs around")
    v.add_argument("-o", "--output", default=None)
    v.set_defaults(func=_cmd_verify)

    b = sub.add_parser("bench", help="run benchmark models through the compiler")
    b.add_argument("--models", required=True, help="comma-separated model names")
    b.add_argument("--sizes", required=True, help="comma-separated site counts")
    b.add_argument("--aais", choices=["rydberg", "heisenberg"], default="rydberg")
    b.add_argument("--segments", type=int, default=4, help="segments for time-dependent models")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--no-plot", action="store_true", default=False)
    b.add_argument("-o", "--output", default=None, help="CSV path; JSON and figures land beside it")
    b.set_defaults(func=_cmd_bench)

    i = sub.add_parser("inspect", help="print a schedule's report as a table")
    i.add_argument("--schedule", required=True)
    i.add_argument("--figure", default=None, help="also render the schedule to this PNG")
    i.set_defaults(func=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="pulseforge: %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except CompilerError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
