"""
mobo-sr - command line entry point
"""

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import structlog
from rich import box
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from app.core.config import APP_NAME, APP_VERSION, load_run_config, render_default_config, settings
from app.core.exceptions import ArchiveError, MoboException
from app.core.logging import configure_logging
from app.schemas.config import RunConfig
from app.schemas.observation import Observation, RunManifest
from app.services.archive_service import ArchiveService
from app.services.bench_service import BenchResult, run_bench
from app.services.engine_service import MoboEngine, ObservationCallback, ParetoArchive, build_evaluator
from app.services.problem_service import get_problem
from app.services.report_service import (
    HV_CSV_DOC,
    PARETO_CSV_DOC,
    TIMING_CSV_DOC,
    build_report,
    hypervolume_csv,
    pareto_csv,
    pareto_front,
    timing_csv,
)

logger = structlog.get_logger(__name__)

CSV_EPILOG = f"""\
CSV schemas:
  pareto --csv      {PARETO_CSV_DOC}
  report --csv      {TIMING_CSV_DOC}
  report --hv-csv   {HV_CSV_DOC}

Exit codes: 0 success, 1 runtime failure or corrupt records, 2 invalid input, 3 archive locked.
Log verbosity: MOBO_LOG_LEVEL (JSON logs on stderr).
"""


def _console() -> Console:
    return Console(highlight=False)


def _fmt(values: List[float]) -> str:
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def default_archive_path(config_path: Path) -> Path:
    return config_path.with_suffix(".archive.jsonl")


def cmd_init(args: argparse.Namespace) -> int:
    path = Path(args.path)
    if path.exists() and not args.force:
        _console().print(f"[red]{path} already exists[/red] (use --force to overwrite)")
        return 2
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_default_config(), encoding="utf-8")
    logger.info("Config written", path=str(path))
    _console().print(f"Wrote default configuration to {path}")
    return 0


def _progress_printer(console: Console, config: RunConfig) -> ObservationCallback:
    def show(observation: Observation, archive: ParetoArchive) -> None:
        hv = archive.hypervolume(slack=config.engine.reference_slack)
        console.print(
            f"[bold]{observation.iteration:4d}[/bold] {observation.phase:<10} "
            f"w={_fmt(observation.weights)} obj={_fmt(observation.objectives_raw)} "
            f"front={len(archive.front_indices)} hv={hv:.6g} "
            f"eval={observation.eval_wall_seconds:.3f}s fit={observation.fit_wall_seconds:.3f}s "
            f"propose={observation.propose_wall_seconds:.3f}s"
        )

    return show


def _execute(config: RunConfig, archive: ParetoArchive) -> int:
    """Drive the engine; the caller holds the archive lock"""
    console = _console()
    engine = MoboEngine(config, build_evaluator(config), on_observation=_progress_printer(console, config))
    archive = engine.run(archive)
    front = pareto_front(archive.observations)
    console.print(
        f"Done: {len(archive)} observations, front size {len(front)}, "
        f"hypervolume {archive.hypervolume(slack=config.engine.reference_slack):.6g}"
    )
    if engine.pretrain_count and config.engine.window:
        console.print(
            f"Note: {engine.pretrain_count} fixed warm-weight observations enter the surrogate "
            f"only while they fall inside the window of {config.engine.window}"
        )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config_path = Path(args.config)
    config = load_run_config(config_path)
    archive_path = Path(args.archive) if args.archive else default_archive_path(config_path)
    store = ArchiveService(archive_path)
    if store.exists() and store.path.stat().st_size > 0:
        raise ArchiveError(f"{archive_path} already holds observations; use `resume` to continue it")

    with store.lock():
        store.write_manifest(
            RunManifest(
                config_path=str(config_path.resolve()),
                archive_path=str(archive_path.resolve()),
                created_at=datetime.now(timezone.utc),
                engine_version=APP_VERSION,
            )
        )
        logger.info("Run starting", config=str(config_path), archive=str(archive_path))
        return _execute(config, ParetoArchive(store=store))


def cmd_resume(args: argparse.Namespace) -> int:
    store = ArchiveService(args.archive)
    manifest = store.read_manifest()
    config = load_run_config(manifest.config_path)
    with store.lock():
        observations = store.load_for_resume()
        logger.info("Resuming run", archive=str(store.path), observations=len(observations))
        return _execute(config, ParetoArchive(observations, store=store))


def _report_errors(console: Console, errors: Sequence[Tuple[int, str]]) -> None:
    for line_number, message in errors:
        console.print(f"[red]line {line_number}:[/red] {escape(message)}")


def cmd_pareto(args: argparse.Namespace) -> int:
    console = _console()
    store = ArchiveService(args.archive)
    result = store.read()
    front = pareto_front(result.observations)

    table = Table(title=f"Pareto front ({len(front)} of {len(result.observations)})", box=box.SIMPLE)
    table.add_column("iteration", justify="right")
    table.add_column("phase")
    table.add_column("weights")
    table.add_column("objectives")
    for o in front:
        table.add_row(str(o.iteration), o.phase, _fmt(o.weights), _fmt(o.objectives_raw))
    console.print(table)

    if args.csv:
        Path(args.csv).write_text(pareto_csv(front), encoding="utf-8")
        console.print(f"CSV written to {args.csv}")
    _report_errors(console, result.errors)
    return 1 if result.errors else 0


def _report_config(store: ArchiveService) -> Optional[RunConfig]:
    """The run's config via its manifest, if both are still readable"""
    try:
        return load_run_config(store.read_manifest().config_path)
    except MoboException as exc:
        logger.info("Report without run config", reason=exc.message)
        return None


def cmd_report(args: argparse.Namespace) -> int:
    console = _console()
    store = ArchiveService(args.archive)
    config = _report_config(store)
    slack = config.engine.reference_slack if config is not None else 0.1
    problem = None
    if config is not None and config.problem.name != "restoration":
        problem = get_problem(config.problem.name, config.problem.dim)
    report = build_report(store, slack=slack, problem=problem)

    table = Table(title="Time analysis", box=box.SIMPLE)
    for column in ("iteration", "phase", "eval s", "fit s", "propose s", "cum eval s", "cum BO s", "hypervolume"):
        table.add_column(column, justify="right")
    for row, (_, hv) in zip(report.timing, report.hypervolume):
        table.add_row(
            str(row.iteration),
            row.phase,
            f"{row.eval_seconds:.3f}",
            f"{row.fit_seconds:.3f}",
            f"{row.propose_seconds:.3f}",
            f"{row.cumulative_eval_seconds:.3f}",
            f"{row.cumulative_bo_seconds:.3f}",
            f"{hv:.6g}",
        )
    console.print(table)

    ratio = "n/a" if report.time_ratio is None else f"{report.time_ratio:.2f}"
    correlation = "n/a" if report.fit_rank_correlation is None else f"{report.fit_rank_correlation:.2f}"
    console.print(f"Evaluator / BO time ratio: {ratio}")
    console.print(f"Fit time rank correlation with iteration: {correlation}")
    if report.reference is not None:
        console.print(f"Reference point (canonical): {_fmt(report.reference)}")
    if report.true_front_gap is not None:
        console.print(f"Hypervolume gap to the true front: {report.true_front_gap:.6g}")
    warm = sum(1 for o in report.observations if o.phase == "warm-start")
    console.print(f"Warm-start observations included in the front computation: {warm}")

    if args.csv:
        Path(args.csv).write_text(timing_csv(report.timing), encoding="utf-8")
        console.print(f"Timing CSV written to {args.csv}")
    if args.hv_csv:
        Path(args.hv_csv).write_text(hypervolume_csv(report.hypervolume), encoding="utf-8")
        console.print(f"Hypervolume CSV written to {args.hv_csv}")
    _report_errors(console, report.errors)
    return 1 if report.errors else 0


def cmd_bench(args: argparse.Namespace) -> int:
    console = _console()

    def show(result: BenchResult) -> None:
        status = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
        console.print(f"{status} {result.name}: {result.detail} ({result.seconds:.1f}s)")

    results = run_bench(full=args.full, seeds=args.seeds, on_result=show)
    table = Table(title="Bench summary", box=box.SIMPLE)
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    table.add_column("seconds", justify="right")
    for r in results:
        table.add_row(r.name, "PASS" if r.passed else "FAIL", r.detail, f"{r.seconds:.1f}")
    console.print(table)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=APP_NAME,
        description="Multi-objective Bayesian optimization of restoration loss weights",
        epilog=CSV_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="Write a commented default configuration")
    p_init.add_argument("path", nargs="?", default="mobo.toml")
    p_init.add_argument("--force", action="store_true", help="Overwrite an existing file")
    p_init.set_defaults(handler=cmd_init)

    p_run = sub.add_parser("run", help="Run an optimization from a configuration file")
    p_run.add_argument("config")
    p_run.add_argument("--archive", help="Archive path (default: <config stem>.archive.jsonl)")
    p_run.set_defaults(handler=cmd_run)

    p_resume = sub.add_parser("resume", help="Continue an interrupted run from its archive")
    p_resume.add_argument("archive")
    p_resume.set_defaults(handler=cmd_resume)

    p_pareto = sub.add_parser(
        "pareto", help="List the non-dominated observations", epilog=CSV_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_pareto.add_argument("archive")
    p_pareto.add_argument("--csv", help="Write the front as CSV")
    p_pareto.set_defaults(handler=cmd_pareto)

    p_report = sub.add_parser(
        "report", help="Timing and hypervolume traces", epilog=CSV_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p_report.add_argument("archive")
    p_report.add_argument("--csv", help="Write the timing trace as CSV")
    p_report.add_argument("--hv-csv", help="Write the hypervolume trace as CSV")
    p_report.set_defaults(handler=cmd_report)

    p_bench = sub.add_parser("bench", help="Run the validation suite and print pass/fail")
    p_bench.add_argument("--full", action="store_true", help="Include the restoration end-to-end checks")
    p_bench.add_argument("--seeds", type=int, default=10)
    p_bench.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.LOG_LEVEL)
    try:
        return args.handler(args)
    except MoboException as exc:
        logger.error("Command failed", command=args.command, error_code=exc.error_code, error=exc.message, details=exc.details)
        _console().print(f"[red]{exc.error_code}[/red]: {escape(exc.message)}")
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted", command=args.command)
        return 130
    except Exception as exc:
        logger.error("Unhandled exception", command=args.command, error=str(exc), exc_info=True)
        _console().print(f"[red]INTERNAL_ERROR[/red]: {escape(str(exc))}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
