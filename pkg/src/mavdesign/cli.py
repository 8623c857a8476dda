"""Command line interface: ``mavdesign {optimize,check,evaluate,round,simulate}``.

Exit codes: 0 success, 1 invalid input or I/O problem, 2 numerical failure,
3 optimizer verification failure with ``--require-converged``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from .errors import MavDesignError, ValidationError
from .optimizer import OptimizerOptions, compare_problem, optimize_problem
from .reports import write_comparison_csv, write_design_json, write_mse_csv, write_sensitivity_csv
from .rounding import efficient_round
from .scenario import load_design, load_scenario, scenario_hash
from .sensitivity import check_problem
from .simulation import METHODS, run_mse_study

log = logging.getLogger("mavdesign")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_UNVERIFIED = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _bundled(kind: str, name: str) -> Path:
    return Path(str(resources.files("mavdesign") / "data" / kind / name))


def resolve_path(arg: str, kind: str) -> Path:
    """A path on disk, or the name of a bundled scenario/design file."""
    p = Path(arg)
    if p.exists():
        return p
    for cand in (arg, arg + ".json"):
        b = _bundled(kind, cand)
        if b.exists():
            return b
    raise ValidationError(f"{arg}: no such file (and no bundled {kind[:-1]} of that name)")


def _csv_list(value: str) -> list:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise ValidationError("expected a comma-separated list")
    return items


def _u64(value: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--config", required=True, help="scenario JSON file or bundled scenario name")
    shared.add_argument("--out", default=".", help="output directory (optimize also accepts a .json design path)")
    shared.add_argument("--seed", type=_u64, default=0)

    p = _Parser(prog="mavdesign", description="Bayesian optimal designs for model averaging estimation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    o = sub.add_parser("optimize", parents=[shared], help="compute an optimal design")
    o.add_argument("--starts", type=int, default=20)
    o.add_argument("--k", type=int, default=None, help="initial number of support points")
    o.add_argument("--require-converged", action="store_true")

    c = sub.add_parser("check", parents=[shared], help="evaluate the sensitivity function of a design")
    c.add_argument("--design", required=True)
    c.add_argument("--grid", type=int, default=1001)
    c.add_argument("--tol", type=float, default=None, help="absolute tolerance (default 1e-4 times the criterion)")

    e = sub.add_parser("evaluate", parents=[shared], help="criterion values and efficiencies of designs")
    e.add_argument("--designs", required=True, type=str)

    r = sub.add_parser("round", parents=[shared], help="round a design to integer counts")
    r.add_argument("--design", required=True)
    r.add_argument("--n", type=int, default=None, help="total sample size (default: the scenario's n)")

    s = sub.add_parser("simulate", parents=[shared], help="Monte Carlo MSE of the target estimate")
    s.add_argument("--designs", required=True, type=str)
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--methods", type=str, default=",".join(METHODS))
    return p


def _designs(arg: str) -> dict:
    out = {}
    for item in _csv_list(arg):
        path = resolve_path(item, "designs")
        name = path.stem
        if name in out:
            raise ValidationError(f"design {name!r} given twice")
        out[name] = load_design(path)
    return out


def _out_paths(out: str, default_name: str) -> tuple:
    p = Path(out)
    if p.suffix.lower() in (".json", ".csv"):
        return p, p.parent
    return p / default_name, p


def _optimize(args, sc) -> int:
    opts = OptimizerOptions(n_starts=args.starts, k_init=args.k, rng_seed=args.seed)
    result = optimize_problem(sc.problem(), sc.space, opts)
    design_path, out_dir = _out_paths(args.out, "design.json")
    write_design_json(result.design, design_path)
    sens_name = "sensitivity.csv" if design_path.name == "design.json" else design_path.stem + "_sensitivity.csv"
    write_sensitivity_csv(result.sensitivity, out_dir / sens_name)
    print(f"phi={result.phi!r} converged={result.converged} k={result.design.k}")
    print(f"points={list(result.design.points)}")
    print(f"weights={list(result.design.weights)}")
    if args.require_converged and not result.converged:
        log.error("verification failed: max d_pi %.3g exceeds tolerance %.3g", result.sensitivity.max_violation, result.sensitivity.tol)
        return EXIT_UNVERIFIED
    return EXIT_OK


def _check(args, sc) -> int:
    design = load_design(resolve_path(args.design, "designs"))
    design.check_within(sc.space)
    report = check_problem(sc.problem(), design, sc.space, args.grid, tol=args.tol)
    path, _ = _out_paths(args.out, "sensitivity.csv")
    write_sensitivity_csv(report, path)
    print(f"phi={report.phi!r} max_d_pi={report.max_violation!r} tol={report.tol!r} passed={report.passed}")
    return EXIT_OK


def _evaluate(args, sc) -> int:
    designs = _designs(args.designs)
    for d in designs.values():
        d.check_within(sc.space)
    rows = compare_problem(sc.problem(), designs)
    path, _ = _out_paths(args.out, "comparison.csv")
    write_comparison_csv(rows, path)
    for r in rows:
        print(f"{r.name}: phi={r.phi!r} efficiency={r.efficiency!r}" + (f" error={r.error}" if r.error else ""))
    return EXIT_OK


def _round(args, sc) -> int:
    design = load_design(resolve_path(args.design, "designs"))
    counts = efficient_round(design, sc.n if args.n is None else args.n)
    print(",".join(str(c) for c in counts))
    return EXIT_OK


def _simulate(args, sc) -> int:
    designs = _designs(args.designs)
    methods = _csv_list(args.methods)
    if not sc.truths:
        raise ValidationError("scenario defines no truths to simulate from")
    rows = []
    for truth in sc.truths:
        rows.extend(run_mse_study(sc, designs, methods, truth, args.reps, args.seed))
    path, _ = _out_paths(args.out, "mse.csv")
    write_mse_csv(rows, path)
    for r in rows:
        print(f"{r.design},{r.method},{r.truth_id}: mse={r.mse!r} invalid={r.n_invalid}")
    return EXIT_OK


_COMMANDS = {"optimize": _optimize, "check": _check, "evaluate": _evaluate, "round": _round, "simulate": _simulate}


def run_command(argv) -> int:
    try:
        args = build_parser().parse_args(list(argv))
        sc = load_scenario(resolve_path(args.config, "scenarios"))
        log.info("scenario %s sha256=%s seed=%d", sc.name or args.config, scenario_hash(sc), args.seed)
        return _COMMANDS[args.command](args, sc)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:  # ValidationError and DomainError are ValueErrors
        log.error("%s", exc)
        return EXIT_INVALID
    except (MavDesignError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


def main(argv=None) -> None:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":  # pragma: no cover
    main()
