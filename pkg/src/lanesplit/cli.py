"""Split-ratio solver and managed-lane corridor simulator.

Exit codes: 0 success, 1 invalid input, 2 solver hit its iteration cap or
stalled (results are still written, and flagged).
"""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

from . import fileio
from .problem import ValidationError
from .simulator import run
from .solver import SolverOptions, solve

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def _report_invalid(err: ValidationError) -> int:
    print("invalid input:", file=sys.stderr)
    for issue in err.issues:
        print(f"  - {issue}", file=sys.stderr)
    return EXIT_INPUT


def _options(args) -> SolverOptions:
    kw = {"balance_rule": args.balance_rule}
    if getattr(args, "tol", None) is not None:
        kw["mu_equal_tol"] = args.tol
    return SolverOptions(**kw)


def cmd_solve_node(args) -> int:
    try:
        problem = fileio.load_node_problem(args.input)
        res = solve(problem, _options(args))
    except ValidationError as err:
        return _report_invalid(err)
    sys.stdout.write(fileio.splits_csv(res.problem, res.beta))
    if args.trace:
        Path(args.trace).write_text(fileio.trace_jsonl(res.problem, res.trace), encoding="utf-8")
    for note in res.problem.notes:
        print(f"note: {note}", file=sys.stderr)
    if res.flagged:
        print(f"warning: solver ended with {res.termination.value}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_trace(args) -> int:
    try:
        problem = fileio.load_node_problem(args.input)
        res = solve(problem, _options(args))
    except ValidationError as err:
        return _report_invalid(err)
    if args.format == "csv":
        sys.stdout.write(fileio.trace_csv(res.problem, res.trace))
    else:
        sys.stdout.write(fileio.trace_table(res.problem, res.trace))
    return EXIT_NUMERIC if res.flagged else EXIT_OK


def cmd_simulate(args) -> int:
    out = Path(args.out)
    try:
        scenario = fileio.load_scenario(args.scenario)
        if args.balance_rule is not None:
            scenario.solver = SolverOptions(
                balance_rule=args.balance_rule,
                mu_equal_tol=scenario.solver.mu_equal_tol,
                supply_floor=scenario.solver.supply_floor,
                max_iterations=scenario.solver.max_iterations,
                stall_tol=scenario.solver.stall_tol,
                tie_tol=scenario.solver.tie_tol,
            )
    except ValidationError as err:
        return _report_invalid(err)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        result = run(scenario, stride=args.stride)
        fileio.write_states_csv(result, staging / "states.csv")
        fileio.write_summary(result, staging / "summary.json")
        nodes_dir = staging / "nodes"
        final = result.snapshots[-1].nodes
        if final:
            nodes_dir.mkdir()
            for name, summary in sorted(final.items()):
                fileio.save_node_problem(summary.problem, nodes_dir / f"{name}.yaml")
        if not args.no_figures:
            from .plotting import simulation_figures

            simulation_figures(result, staging)
        for item in sorted(staging.iterdir()):
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            item.rename(target)
    except ValidationError as err:
        return _report_invalid(err)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    s = result.summary
    print(f"steps: {s['steps']}")
    print("conservation residual: " + ", ".join(
        f"{c}={fileio.fmt(r)}" for c, r in zip(s["classes"], s["conservation_residual"])
    ))
    print("solver terminations: " + (", ".join(f"{k}={v}" for k, v in s["solver_terminations"].items()) or "none"))
    flagged = {"ITERATION_CAP", "STALL"} & set(s["solver_terminations"])
    return EXIT_NUMERIC if flagged else EXIT_OK


def cmd_report(args) -> int:
    from .report import build_report

    findings = build_report(args.out, figure=not args.no_figures)
    for rule, f in findings.items():
        print(
            f"{rule}: final beta[1->3,H]={fileio.fmt(f['final'][0])} beta[1->4,H]={fileio.fmt(f['final'][1])} "
            f"matches={'yes' if f['final_matches'] else 'no'}; forced at k=2: "
            f"{fileio.fmt(f['forced'][0])}/{fileio.fmt(f['forced'][1])} matches={'yes' if f['forced_matches'] else 'no'}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanesplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_flags(p):
        p.add_argument("--input", required=True, help="node problem YAML file")
        p.add_argument("--balance-rule", choices=["plain", "oriented"], default="plain")
        p.add_argument("--tol", type=float, default=None, help="relative tolerance of the mu equality test")

    p = sub.add_parser("solve-node", help="assign unknown split ratios of one node")
    solver_flags(p)
    p.add_argument("--trace", help="write a JSON-lines trace here")
    p.set_defaults(func=cmd_solve_node)

    p = sub.add_parser("trace", help="print the per-iteration solver walkthrough")
    solver_flags(p)
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="run a scenario and write CSV, summary and figures")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--balance-rule", choices=["plain", "oriented"], default=None)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="regenerate the worked-example balance-rule report")
    p.add_argument("--out", default="reports")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "stride", 1) < 1:
        print("invalid input:\n  - --stride must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
