"""Command-line interface: benchmark runs, rule dumps, validation.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (
    builtin_problem,
    format_results_csv,
    parse_problem_file,
    report_groups,
    run_study,
    validate_problem,
)
from .errors import NonConvergenceError, ProblemFileError, TrimQuadError
from .quadrature import solve_patchwise_1d
from .splines import KnotVector, SplineSpace1D, target_space

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _load_problem(path: str):
    if path.startswith("builtin:"):
        return builtin_problem(path.removeprefix("builtin:"))
    with open(path) as fh:
        return parse_problem_file(fh.read())


def _cmd_run(args) -> int:
    try:
        problem = _load_problem(args.problem)
        validate_problem(problem)
    except (ProblemFileError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    rows = run_study(problem, out_path=args.out, workers=args.workers)
    failures = [r for r in rows if r.error]
    for row in rows:
        status = row.error if row.error else (
            f"W={row.energy:.10g} ratio={row.ratio:.4f}")
        print(f"p={row.p} mesh={row.mesh}x{row.mesh} {row.method:8s} {status}")
    if args.out:
        print(f"results written to {args.out}")
    if len(failures) == len(rows) and rows:
        return EXIT_NUMERICAL
    return 0


def _cmd_rule(args) -> int:
    try:
        knots = np.asarray([float(tok) for tok in
                            args.knots.replace(",", " ").split()])
        solution = SplineSpace1D(KnotVector(knots, args.degree))
        target = target_space(solution, args.element)
    except (ValueError, TrimQuadError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        rule = solve_patchwise_1d(target)
    except NonConvergenceError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(rule.format_text())
    return 0


def _cmd_groups(args) -> int:
    try:
        problem = _load_problem(args.problem)
        validate_problem(problem)
    except (ProblemFileError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    meshes = ([int(m) for m in args.meshes.replace(",", " ").split()]
              if args.meshes else problem.study.meshes)
    try:
        table = report_groups(problem, args.p, meshes)
    except TrimQuadError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print("mesh,pw,tra,t,ia")
    for row in table:
        print(f"{row['mesh']},{row['pw']:.6f},{row['tra']:.6f},"
              f"{row['t']:.6f},{row['ia']:.6f}")
    return 0


def _cmd_validate(args) -> int:
    try:
        problem = _load_problem(args.problem)
        validate_problem(problem)
    except (ProblemFileError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"problem {problem.name!r}: OK")
    patch = problem.geometry.patch()
    rect = patch.parametric_rect
    area = (rect[1] - rect[0]) * (rect[3] - rect[2])
    if problem.loops:
        from .oracle import greens_area

        valid = greens_area(problem.loops, rect)
        print(f"valid area: {valid:.12g} of {area:.12g} "
              f"({100 * valid / area:.3f}%)")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="trimquad",
        description="Patch-wise quadrature benchmarks for trimmed surfaces")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark study")
    p_run.add_argument("problem",
                       help="problem file path or builtin:<name>")
    p_run.add_argument("--out", default=None, help="results CSV path")
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel workers (default: TRIMQUAD_WORKERS or 1)")
    p_run.set_defaults(func=_cmd_run)

    p_rule = sub.add_parser("rule", help="print a patch-wise 1D rule")
    p_rule.add_argument("--knots", required=True,
                        help="solution-space knot vector, e.g. '0,0,0,0.5,1,1,1'")
    p_rule.add_argument("--degree", type=int, required=True)
    p_rule.add_argument("--element", choices=("plane", "kl_plate"),
                        default="plane")
    p_rule.set_defaults(func=_cmd_rule)

    p_groups = sub.add_parser("groups", help="element-group fractions")
    p_groups.add_argument("problem")
    p_groups.add_argument("--p", type=int, default=2,
                          help="polynomial degree (default 2)")
    p_groups.add_argument("--meshes", default=None,
                          help="mesh list, e.g. '8,16,32'")
    p_groups.set_defaults(func=_cmd_groups)

    p_val = sub.add_parser("validate", help="validate a problem file")
    p_val.add_argument("problem")
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
