"""Command-line interface for varcalc.

Every command takes a problem file (or ``--builtin NAME``) and prints a
human summary; ``--json PATH`` writes the machine report (``-`` for stdout)
and ``--csv PATH`` the candidate table where one exists.

Usage:
  varcalc check (--builtin NAME | FILE) [--tol X] [--json PATH]
  varcalc abnormality (--builtin NAME | FILE) [--scan-local] [--tol X] [--json PATH]
  varcalc solve (--builtin NAME | FILE) [--csv PATH] [--json PATH]
  varcalc verify (--builtin NAME | FILE) --candidate CSV [--stationarity] [--json PATH]
  varcalc multipliers (--builtin NAME | FILE) [--candidate CSV] [--csv PATH] [--json PATH]
  varcalc gauge-test (--builtin NAME | FILE) [-f EXPR] [--candidate CSV] [--json PATH]

Exit codes: 0 pass, 1 analysis negative or not converged, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from typing import Any, Iterator, TextIO

EXIT_PASS = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2


# ANSI colour per verdict state of a summary line
_VERDICT_COLORS = {
    "passed": "\033[92m",
    "warning": "\033[93m",
    "abnormal": "\033[93m",
    "failed": "\033[91m",
    "not_converged": "\033[91m",
}
_VERDICT_SYMBOLS = {"passed": "✅", "abnormal": "⚠️ ", "failed": "❌", "not_converged": "❌"}
_RESET = "\033[0m"


def _color_enabled(stream: TextIO | None = None) -> bool:
    """Colour only on a terminal (disabled in pipes)."""
    return (stream or sys.stdout).isatty()


def _paint(text: str, verdict: str, stream: TextIO | None = None) -> str:
    """Colour ``text`` for a verdict state; unknown states stay plain."""
    if not _color_enabled(stream) or verdict not in _VERDICT_COLORS:
        return text
    return f"{_VERDICT_COLORS[verdict]}{text}{_RESET}"


def _error(message: str) -> None:
    print(_paint(f"Error: {message}", "failed", sys.stderr), file=sys.stderr)


def _configure_logging(verbosity: int) -> None:
    from .config import settings

    level = {0: settings.log_level.upper(), 1: "INFO"}.get(verbosity, "DEBUG")
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
        stream=sys.stderr,
    )


@contextmanager
def analysis_session(args: argparse.Namespace) -> Iterator[Any]:
    """Load the problem and build the engine, with lazy imports so --help stays fast."""
    from .engine import AnalysisEngine
    from .problem import load_builtin, load_problem

    if args.builtin:
        problem = load_builtin(args.builtin)
    elif args.problem:
        problem = load_problem(args.problem)
    else:
        raise ValueError("give a problem FILE or --builtin NAME")
    yield AnalysisEngine(problem)


def _emit_json(path: str | None, report: dict[str, Any]) -> None:
    from .utils import to_jsonable, write_json

    if path is None:
        return
    if path == "-":
        print(json.dumps(to_jsonable(report), indent=2, ensure_ascii=False, sort_keys=True))
    else:
        write_json(path, report)


def _stdout_is_report(args: argparse.Namespace) -> bool:
    return getattr(args, "json", None) == "-"


def _status(passed: bool, ok: str, failed: str, verdict: str = "failed") -> str:
    state = "passed" if passed else verdict
    text = ok if passed else failed
    return _paint(f"{_VERDICT_SYMBOLS[state]} {text}", state)


def _residual_table(title: str, rows: dict[str, float | None]) -> None:
    from rich.console import Console
    from rich.table import Table

    table = Table(title=title, show_header=True)
    table.add_column("residual")
    table.add_column("value", justify="right")
    for key, value in rows.items():
        table.add_row(key, "-" if value is None else f"{value:.6g}")
    Console().print(table)


# ── Commands ────────────────────────────────────────


def cmd_check(args: argparse.Namespace) -> int:
    """Admissibility residual, rank certificate and corner jumps."""
    with analysis_session(args) as engine:
        outcome = engine.check(tol=args.tol)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    from rich.console import Console
    from rich.table import Table

    print(_status(outcome.passed, "Curve admissible", "Curve not admissible"))
    print(f"   Problem: {report['problem']}")
    print(f"   Residual: {report['admissibility_residual']:.6g} (tol {report['tol']:g})")
    if report["min_singular_ratio"] is not None:
        rank = "full" if report["rank_ok"] else _paint("deficient", "warning")
        print(
            f"   Rank of dpsi/dz: {rank} (min ratio {report['min_singular_ratio']:.6g}"
            f" at t = {report['min_singular_time']:.6g})"
        )
    if report["corner_jumps"]:
        table = Table(title="Velocity jumps at corners")
        table.add_column("corner", justify="right")
        table.add_column("t", justify="right")
        table.add_column("jump of psi")
        for jump in report["corner_jumps"]:
            table.add_row(
                str(jump["corner"]), f"{jump['time']:.6g}", ", ".join(f"{x:.6g}" for x in jump["jump"])
            )
        Console().print(table)
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def _abnormality_summary(report: dict[str, Any]) -> str:
    summary = f"index {report['index']} ({'normal' if report['normal'] else 'abnormal'})"
    if report["locally_normal"] is True:
        summary += "; locally normal"
    elif report["locally_normal"] is False:
        start, end, index = report["failing_window"]
        summary += f"; NOT locally normal: [{start:g}, {end:g}] has index {index}"
    return summary


def cmd_abnormality(args: argparse.Namespace) -> int:
    """Abnormality index, Gram cross-check and optional local-normality scan."""
    with analysis_session(args) as engine:
        outcome = engine.abnormality(tol=args.tol, scan_local=args.scan_local)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    from rich.console import Console
    from rich.table import Table

    verdict = "failed" if report["normal"] else "abnormal"
    print(_status(outcome.passed, _abnormality_summary(report), _abnormality_summary(report), verdict))
    print(f"   Problem: {report['problem']}")
    print(f"   Gram rank: {report['gram_rank']} (n - p = {report['n'] - report['index']})")
    for note in report["notes"]:
        print(_paint(f"   Note: {note}", "warning"))

    table = Table(title=f"Singular values (tol {report['tol']:g})")
    table.add_column("k", justify="right")
    table.add_column("sigma_k / sigma_1", justify="right")
    table.add_column("Gram sigma_k", justify="right")
    spectrum, gram = report["singular_values"], report["gram_singular_values"]
    top = spectrum[0] if spectrum and spectrum[0] > 0 else 1.0
    for k in range(max(len(spectrum), len(gram))):
        relative = f"{spectrum[k] / top:.6g}" if k < len(spectrum) else ""
        table.add_row(str(k + 1), relative, f"{gram[k]:.6g}" if k < len(gram) else "")
    Console().print(table)

    if args.scan_local:
        scan = Table(title="Local windows")
        scan.add_column("window")
        scan.add_column("index", justify="right")
        for start, end, index in report["scan"]:
            scan.add_row(f"[{start:g}, {end:g}]", str(index))
        Console().print(scan)
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def _solve_with_progress(engine: Any, tol: float | None) -> Any:
    """Solve with a live rich trace of the shooting iterations."""
    from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn

    with Progress(
        SpinnerColumn(),
        TextColumn("[bold]{task.description:<12}"),
        BarColumn(bar_width=30),
        TextColumn("[dim]{task.fields[detail]}"),
        TimeElapsedColumn(),
    ) as progress:
        task = progress.add_task("Shooting", total=engine.settings.shoot_max_iter, detail="starting...")

        def on_progress(iteration: int, norm: float) -> None:
            progress.update(task, completed=iteration, detail=f"iter {iteration}: |F| = {norm:.3e}")

        return engine.solve(tol=tol, on_progress=on_progress)


def _write_candidate(args: argparse.Namespace, engine: Any, outcome: Any) -> None:
    from .utils import write_candidate_csv

    if args.csv is None or outcome.candidate is None:
        return
    lam = outcome.multipliers.arcs if outcome.multipliers is not None else None
    write_candidate_csv(args.csv, engine.system, outcome.candidate.curve, outcome.candidate.momenta, lam)


def cmd_solve(args: argparse.Namespace) -> int:
    """Broken extremal by multiple shooting; artifacts are written even without convergence."""
    with analysis_session(args) as engine:
        if _color_enabled() and not _stdout_is_report(args):
            outcome = _solve_with_progress(engine, args.tol)
        else:
            outcome = engine.solve(tol=args.tol)
        _write_candidate(args, engine, outcome)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    for k, norm in enumerate(report["trace"]):
        print(f"   iter {k:3d}  |F| = {norm:.6e}")
    if report["converged"]:
        print(_status(outcome.passed, "Extremal found", "Shooting converged but residuals exceed tolerance"))
    else:
        print(_status(False, "", "Shooting did not converge", "not_converged"))
    print(f"   Problem: {report['problem']}")
    if report["corner_times"]:
        print(f"   Corner times: {', '.join(f'{t:.6g}' for t in report['corner_times'])}")
    if report["residuals"] is not None:
        _residual_table("Extremal residuals", report["residuals"])
    for note in report["notes"]:
        print(_paint(f"   Note: {note}", "warning"))
    if args.csv and outcome.candidate is not None:
        print(f"   Candidate: {args.csv}")
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def cmd_verify(args: argparse.Namespace) -> int:
    """Extremal residuals of a candidate table, optionally with the stationarity check."""
    with analysis_session(args) as engine:
        outcome = engine.verify(args.candidate, tol=args.tol, stationarity=args.stationarity)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    print(_status(outcome.passed, "Candidate is an extremal", "Candidate fails the extremal equations"))
    print(f"   Problem: {report['problem']}")
    _residual_table("Extremal residuals", report["residuals"])
    if "stationarity" in report:
        print(f"   max |dI/dxi| over deformations: {report['stationarity']['max_derivative']:.6g}")
    for note in report.get("notes", []):
        print(_paint(f"   Note: {note}", "warning"))
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def cmd_multipliers(args: argparse.Namespace) -> int:
    """Lagrange multipliers of the extrinsic problem along an extremal."""
    with analysis_session(args) as engine:
        outcome = engine.multipliers(args.candidate, tol=args.tol)
        _write_candidate(args, engine, outcome)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    print(_status(outcome.passed, "Multipliers recovered", "Multiplier recovery failed"))
    print(f"   Problem: {report['problem']}")
    if report["recovered"]:
        for k, (low, high) in enumerate(report["lambda_range"], start=1):
            print(f"   lambda_{k}: [{low:.6g}, {high:.6g}]")
        _residual_table("Extrinsic Euler-Lagrange", report["correspondence"])
    for note in report.get("notes", []):
        print(_paint(f"   Note: {note}", "warning"))
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def cmd_gauge_test(args: argparse.Namespace) -> int:
    """Extremality must survive L -> L + df/dt, p -> p + df/dq."""
    with analysis_session(args) as engine:
        outcome = engine.gauge_test(args.f, args.candidate, tol=args.tol)
        _write_candidate(args, engine, outcome)
    report = outcome.report
    _emit_json(args.json, report)
    if _stdout_is_report(args):
        return EXIT_PASS if outcome.passed else EXIT_NEGATIVE

    print(_status(outcome.passed, f"Gauge invariance holds for f = {report['gauge']}", "Gauge test failed"))
    print(f"   Problem: {report['problem']}")
    print(f"   max residual before: {report['residuals_before']['max_residual']:.6g}")
    print(f"   max residual after:  {report['residuals_after']['max_residual']:.6g}")
    print(f"   Time: {outcome.elapsed_ms}ms")
    return EXIT_PASS if outcome.passed else EXIT_NEGATIVE


def _dispatch(args: argparse.Namespace) -> int:
    from .errors import (
        BadMetric,
        ExpressionSyntaxError,
        UnboundSymbol,
        UnknownFunction,
        ValidationError,
        VarcalcError,
    )

    try:
        return args.func(args)
    except (ValidationError, ExpressionSyntaxError, UnknownFunction, UnboundSymbol, BadMetric, ValueError, OSError) as e:
        _error(str(e))
        return EXIT_INPUT
    except VarcalcError as e:
        _error(str(e))
        return EXIT_NEGATIVE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varcalc",
        description="Constrained variational calculus: admissibility, abnormality, extremals, multipliers",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG logs")

    subparsers = parser.add_subparsers(dest="command", help="Command to execute")
    subparsers.required = True

    def add_command(name: str, help_text: str, func: Any) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        source = sub.add_mutually_exclusive_group()
        source.add_argument("problem", nargs="?", help="Problem file")
        source.add_argument("--builtin", metavar="NAME", help="Built-in corpus problem")
        sub.add_argument("--tol", type=float, help="Acceptance tolerance (SVD tolerance for abnormality, admissibility for check)")
        sub.add_argument("--json", metavar="PATH", help="Write the JSON report ('-' for stdout)")
        sub.set_defaults(func=func)
        return sub

    add_command("check", "Admissibility residual, rank and corner jumps", cmd_check)

    abnormality = add_command("abnormality", "Abnormality index and normality", cmd_abnormality)
    abnormality.add_argument("--scan-local", action="store_true", help="Report the subinterval scan")

    solve = add_command("solve", "Solve for a broken extremal by shooting", cmd_solve)
    solve.add_argument("--csv", metavar="PATH", help="Write the candidate table")

    verify = add_command("verify", "Extremal residuals of a candidate table", cmd_verify)
    verify.add_argument("--candidate", metavar="CSV", required=True, help="Candidate table (from solve --csv)")
    verify.add_argument("--stationarity", action="store_true", help="Also run the finite-deformation check")

    multipliers = add_command("multipliers", "Recover Lagrange multipliers", cmd_multipliers)
    multipliers.add_argument("--candidate", metavar="CSV", help="Candidate table (solves the problem if absent)")
    multipliers.add_argument("--csv", metavar="PATH", help="Write the candidate table with lambda columns")

    gauge = add_command("gauge-test", "Check invariance under L -> L + df/dt", cmd_gauge_test)
    gauge.add_argument("-f", metavar="EXPR", help="Gauge function f(t, q) (default: [solve] gauge)")
    gauge.add_argument("--candidate", metavar="CSV", help="Candidate table (solves the problem if absent)")
    gauge.add_argument("--csv", metavar="PATH", help="Write the transformed candidate table")
    return parser


def main(argv: list[str] | None = None) -> None:
    """Main CLI entrypoint."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    exit_code = _dispatch(args)
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
