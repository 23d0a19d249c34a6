"""Command-line front end: ``radopf <command> ...``.

Exit codes: 0 success, 2 problem (or point) infeasible, 3 parse, validation,
usage or file error, 4 solver failure.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .algorithm import (AlgorithmConfig, MeasurementSet, Objective, initial_point,
                        simulate_measurements, solve_opf)
from .baseline import raster_region, socp_relaxation
from .errors import (InfeasibleError, NotStrictlyFeasible, NotStrictlyFeasibleStart, ParseError,
                     RadOPFError, ValidationError)
from .matpower import import_matpower
from .model import load_case, require_valid, serialize_case, validate
from .restriction import BasePoints, base_points
from .transform import as_z, check_original_feasibility

log = logging.getLogger("radopf")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3, 4


@dataclass
class CommandOutcome:
    exit_code: int
    report_path: Optional[str]
    summary: str


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this CLI reserves 2 for infeasibility."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _write_json(path: str, doc: dict) -> None:
    _write_text(path, json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _case_digest(case) -> str:
    return hashlib.sha256(serialize_case(case).encode()).hexdigest()


def _load_point(path: str, case) -> np.ndarray:
    """z from a point file, an operating point, or a solve report."""
    doc = _read_json(path)
    if isinstance(doc, dict) and "result" in doc and isinstance(doc["result"], dict):
        doc = doc["result"].get("point", doc)
    if isinstance(doc, dict):
        doc = doc.get("z")
    if not isinstance(doc, list):
        raise ParseError(f"{path}: expected a list of z values or an object with a 'z' list")
    try:
        return as_z(case, [float(v) for v in doc])
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _timing(start: float, **extra) -> dict:
    return {"finished_at": dt.datetime.now(dt.timezone.utc).isoformat(),
            "wall_ms": 1e3 * (time.perf_counter() - start), **extra}


def _objective(args, case) -> Objective:
    if args.objective == "loss":
        return Objective.loss()
    if args.objective == "cost":
        return Objective.linear_cost(case.cost_coeffs)
    if not getattr(args, "measurements", None):
        raise _UsageError("--objective estimate needs --measurements")
    return Objective.state_estimation(MeasurementSet.from_dict(_read_json(args.measurements)))


# ----------------------------------------------------------------- commands

def _cmd_validate(args) -> CommandOutcome:
    case = load_case(args.case)
    report = validate(case)
    for msg in report.warnings:
        log.warning(msg)
    for rule, elem, msg in report.violations:
        log.error("%s (%s): %s", rule, elem, msg)
    if report.ok:
        return CommandOutcome(EXIT_OK, None, f"valid: {case.n_buses} buses, {case.n_edges} edges")
    return CommandOutcome(EXIT_INPUT, None, f"invalid: {len(report.violations)} violation(s)")


def _cmd_import(args) -> CommandOutcome:
    text = Path(args.matpower).read_text(encoding="utf-8")
    case, report = import_matpower(text, default_angle=args.default_angle,
                                   load_tolerance=args.load_tolerance)
    for msg in report.warnings:
        log.warning(msg)
    if not report.ok:
        for rule, elem, msg in report.violations:
            log.error("%s (%s): %s", rule, elem, msg)
        return CommandOutcome(EXIT_INPUT, None, f"invalid: {len(report.violations)} violation(s)")
    _write_text(args.out, serialize_case(case) + "\n")
    return CommandOutcome(EXIT_OK, args.out, f"imported {case.n_buses} buses, {case.n_edges} edges, "
                                             f"{len(report.warnings)} warning(s)")


def _cmd_solve(args) -> CommandOutcome:
    start = time.perf_counter()
    case = load_case(args.case)
    require_valid(case)
    obj = _objective(args, case)
    config = AlgorithmConfig(eps=args.eps, max_outer=args.max_iter)
    if args.init == "auto":
        z_init = initial_point(case, config)
    else:
        z_init = _load_point(args.init, case)
    result = solve_opf(case, obj, z_init=z_init, config=config)
    trace = result.trace
    report = {
        "command": "solve",
        "version": __version__,
        "case_sha256": _case_digest(case),
        "objective": obj.to_dict(),
        "config": {**config.to_dict(), "init": "auto" if args.init == "auto" else "file"},
        "result": {
            "objective_value": result.objective_value,
            "initial_objective": trace.initial_objective,
            "converged": trace.converged,
            "iterations": len(trace),
            "point": result.point.to_dict(),
            "feasibility": result.feasibility.to_dict(),
        },
        "z_init": np.asarray(z_init).tolist(),
        "trace": [rec.to_dict() for rec in trace],
        "timing": _timing(start, iteration_wall_ms=[rec.wall_ms for rec in trace]),
    }
    if args.out:
        _write_json(args.out, report)
    if args.trace:
        _write_text(args.trace, trace.to_csv())
    state = "converged" if trace.converged else "stopped at max iterations"
    return CommandOutcome(EXIT_OK, args.out, f"objective {result.objective_value:.10g} after "
                                             f"{len(trace)} iteration(s), {state}")


def _cmd_relax(args) -> CommandOutcome:
    start = time.perf_counter()
    case = load_case(args.case)
    obj = _objective(args, case)
    res = socp_relaxation(case, obj)
    report = {"command": "relax", "version": __version__, "case_sha256": _case_digest(case),
              "objective": obj.to_dict(), "result": res.to_dict(), "timing": _timing(start)}
    _write_json(args.out, report)
    exact = "exact" if res.exact else "inexact"
    return CommandOutcome(EXIT_OK, args.out, f"relaxation objective {res.objective_value:.10g}, {exact} "
                                             f"(gap {res.exactness_gap:.3e})")


def _parse_fix(items, n_edges) -> np.ndarray:
    fixed = np.zeros(n_edges)
    for item in items or []:
        try:
            k, v = item.split("=", 1)
            k, v = int(k), float(v)
        except ValueError as exc:
            raise _UsageError(f"--fix expects k=v, got {item!r}") from exc
        if not 0 <= k < n_edges:
            raise _UsageError(f"--fix edge {k} out of range")
        fixed[k] = v
    return fixed


def _cmd_raster(args) -> CommandOutcome:
    case = load_case(args.case)
    require_valid(case)
    try:
        edges = tuple(int(e) for e in args.edges.split(","))
    except ValueError as exc:
        raise _UsageError(f"--edges expects i,j, got {args.edges!r}") from exc
    if len(edges) != 2:
        raise _UsageError("--edges needs exactly two indices")
    fixed = _parse_fix(args.fix, case.n_edges)
    bp = None
    if args.set in ("restricted", "both"):
        if args.base_from:
            doc = _read_json(args.base_from)
            if isinstance(doc, dict) and "points" in doc:
                bp = BasePoints.from_dict(doc)
            else:
                bp = base_points(case, _load_point(args.base_from, case))
        else:
            bp = base_points(case, initial_point(case))
    try:
        grid = raster_region(case, edges, args.resolution, args.set, base=bp, fixed_values=fixed)
    except ValueError as exc:
        raise _UsageError(str(exc)) from exc
    _write_text(args.out, grid.to_csv())
    parts = [f"{args.resolution}x{args.resolution} cells"]
    if grid.original is not None:
        parts.append(f"{int(grid.original.sum())} original-feasible")
    if grid.restricted is not None:
        parts.append(f"{int(grid.restricted.sum())} restricted-feasible")
    return CommandOutcome(EXIT_OK, args.out, ", ".join(parts))


def _cmd_check(args) -> CommandOutcome:
    case = load_case(args.case)
    require_valid(case)
    report = check_original_feasibility(case, _load_point(args.point, case), args.tol)
    for name, r in report.violations:
        log.warning("%s violated by %.3e", name, r)
    if report.feasible:
        return CommandOutcome(EXIT_OK, None, f"feasible (max residual {report.max_violation:.3e})")
    return CommandOutcome(EXIT_INFEASIBLE, None, f"infeasible: {len(report.violations)} violation(s), "
                                                 f"max {report.max_violation:.3e}")


def _cmd_simulate(args) -> CommandOutcome:
    case = load_case(args.case)
    require_valid(case)
    if not args.noise >= 0:
        raise _UsageError("--noise must be nonnegative")
    m = simulate_measurements(case, _load_point(args.point, case), args.noise, args.seed)
    _write_json(args.out, m.to_dict())
    return CommandOutcome(EXIT_OK, args.out, f"wrote {2 * case.n_buses} measurements (sigma {args.noise:g})")


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radopf", description="AC optimal power flow on radial networks by convex restriction")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check a case file")
    p.add_argument("--case", required=True)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("import", help="convert a MATPOWER case to JSON")
    p.add_argument("--matpower", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--default-angle", type=float, default=math.pi / 3,
                   help="angle-difference limit (rad) for branches without one")
    p.add_argument("--load-tolerance", type=float, default=0.0,
                   help="widen equal injection bounds by this much (p.u.) on each side")
    p.set_defaults(func=_cmd_import)

    p = sub.add_parser("solve", help="run the restriction algorithm")
    p.add_argument("--case", required=True)
    p.add_argument("--objective", required=True, choices=["loss", "cost", "estimate"])
    p.add_argument("--measurements")
    p.add_argument("--eps", type=float, default=AlgorithmConfig.eps)
    p.add_argument("--max-iter", type=int, default=AlgorithmConfig.max_outer)
    p.add_argument("--init", default="auto", help="'auto' or a point file")
    p.add_argument("--out")
    p.add_argument("--trace")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("relax", help="solve the cone relaxation")
    p.add_argument("--case", required=True)
    p.add_argument("--objective", required=True, choices=["loss", "cost"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_relax)

    p = sub.add_parser("raster", help="feasibility flags on a grid over two edges")
    p.add_argument("--case", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--set", choices=["original", "restricted", "both"], default="both")
    p.add_argument("--base-from")
    p.add_argument("--fix", action="append", metavar="K=V")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_raster)

    p = sub.add_parser("check", help="check a point against the original constraints")
    p.add_argument("--case", required=True)
    p.add_argument("--point", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("simulate", help="injection measurements at a point")
    p.add_argument("--case", required=True)
    p.add_argument("--point", required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> CommandOutcome:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        return CommandOutcome(EXIT_INPUT, None, f"usage error: {exc}")
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _UsageError as exc:
        return CommandOutcome(EXIT_INPUT, None, f"usage error: {exc}")
    except NotStrictlyFeasibleStart as exc:
        return CommandOutcome(EXIT_SOLVER, None, f"solver failure: {exc}")
    except InfeasibleError as exc:
        return CommandOutcome(EXIT_INFEASIBLE, None, f"infeasible: {exc}")
    except (ParseError, ValidationError, NotStrictlyFeasible, ValueError) as exc:
        return CommandOutcome(EXIT_INPUT, None, f"input error: {exc}")
    except OSError as exc:
        return CommandOutcome(EXIT_INPUT, None, f"file error: {exc}")
    except RadOPFError as exc:
        return CommandOutcome(EXIT_SOLVER, None, f"solver failure: {exc}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    outcome = run(argv)
    print(outcome.summary)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
