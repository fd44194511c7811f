"""Command-line entry point: `python -m ergodic_ia.main {run,verify,figures}`.

Tables go to stdout (or --out) as CSV preceded by `#` comment lines that
echo the command and the validated configuration; logs go to stderr.
"""

import argparse
import shlex
import sys
from functools import partial
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple

import pandas as pd
import structlog
from pydantic import ValidationError

from ergodic_ia.config import settings
from ergodic_ia.delayed_csit import csit_episode
from ergodic_ia.delayed_output_feedback import outputfb_episode
from ergodic_ia.ergodic_baseline import baseline_episode
from ergodic_ia.errors import ConfigurationError, SimulationError
from ergodic_ia.executor import EpisodeExecutor, RunSummary, Runner
from ergodic_ia.logger import setup_logging, system_logger
from ergodic_ia.metrics import dof_formulas, dof_report, figure_data, scheme_formula
from ergodic_ia.models import (
    FeedbackKind,
    PairingMode,
    QuantizerConfig,
    ResultRow,
    RunConfig,
    Scheme,
)
from ergodic_ia.sweeps import member_output_path, sweep_catalog
from ergodic_ia.validation import PropertyValidator

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3

RESULT_COLUMNS = list(ResultRow.model_fields)


def parse_k_range(value: str) -> Tuple[int, int]:
    """Parse a LOW:HIGH user range"""
    try:
        low, high = (int(part) for part in value.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH, got {value!r}")
    return low, high


def build_parser() -> argparse.ArgumentParser:
    """Build the run, verify and figures subcommands"""
    parser = argparse.ArgumentParser(
        prog="ergodic_ia",
        description="Ergodic interference alignment with delayed feedback: simulation and checks",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="simulate a scheme and write a CSV table")
    run.add_argument("--scheme", choices=[s.value for s in Scheme])
    run.add_argument("--k", dest="num_users", type=int, default=settings.DEFAULT_NUM_USERS)
    run.add_argument("--k-range", type=parse_k_range, default=None, help="LOW:HIGH, formulas only")
    run.add_argument("--snr-db", type=float, action="append", default=None, help="repeatable")
    run.add_argument("--episodes", type=int, default=1000)
    run.add_argument("--pairing", choices=[m.value for m in PairingMode], default="genie")
    run.add_argument("--mag-step", type=float, default=settings.QUANT_MAGNITUDE_STEP)
    run.add_argument("--phase-bins", type=int, default=settings.QUANT_PHASE_BINS)
    run.add_argument("--mag-cap", type=float, default=settings.QUANT_MAGNITUDE_CAP)
    run.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    run.add_argument("--noiseless", action="store_true")
    run.add_argument("--delay-slots", type=int, default=settings.DEFAULT_DELAY_SLOTS)
    run.add_argument("--normalize-power", action="store_true")
    run.add_argument("--workers", type=int, default=settings.MAX_WORKERS)
    run.add_argument("--sweep", default=None, help="run every member of a named sweep")
    run.add_argument("--config", default=None, help="JSON sweep definition file")
    run.add_argument("--out", default=None, help="CSV path; stdout when omitted")

    verify = commands.add_parser("verify", help="run the property suite")
    verify.add_argument("--episodes-per-k", type=int, default=200)
    verify.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    verify.add_argument("--workers", type=int, default=settings.MAX_WORKERS)

    figures = commands.add_parser("figures", help="closed-form sum-DoF table")
    figures.add_argument("--k-range", type=parse_k_range, default=(3, 50))
    figures.add_argument("--out", default=None)
    return parser


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    """Validate run flags into a RunConfig"""
    if args.scheme is None:
        raise ConfigurationError("--scheme is required unless --sweep or --config is given")
    fields = dict(
        scheme=args.scheme,
        num_users=args.num_users,
        k_range=args.k_range,
        episodes=args.episodes,
        pairing_mode=args.pairing,
        quantizer=QuantizerConfig(
            magnitude_step=args.mag_step, phase_bins=args.phase_bins, magnitude_cap=args.mag_cap
        ),
        seed=args.seed,
        output_path=args.out,
        noiseless=args.noiseless,
        delay_slots=args.delay_slots,
        normalize_power=args.normalize_power,
        workers=args.workers,
    )
    if args.snr_db is not None:
        fields["snr_db_list"] = args.snr_db
    return RunConfig(**fields)


def runner_for(config: RunConfig) -> Runner:
    """Episode runner bound to the configured pairing and quantizer"""
    common = dict(pairing_mode=config.pairing_mode, q=config.quantizer)
    if config.scheme == Scheme.BASELINE:
        return partial(baseline_episode, **common)
    if config.scheme == Scheme.DELAYED_CSIT:
        return partial(csit_episode, feedback_kind=FeedbackKind.CSI, **common)
    if config.scheme == Scheme.DELAYED_TIME_INDEX:
        return partial(csit_episode, feedback_kind=FeedbackKind.TIME_INDEX, **common)
    if config.scheme == Scheme.DELAYED_OUTPUT_FB:
        return partial(outputfb_episode, **common)
    raise ConfigurationError(f"scheme {config.scheme.value} has no episode runner")


def _counts(summary: RunSummary) -> dict:
    ledgers = summary.ledgers
    return dict(
        episodes_completed=summary.episodes_completed,
        episodes_aborted=summary.episodes_aborted,
        episodes_unpaired=summary.episodes_unpaired,
        ledger_ratio=float(ledgers[0].ratio) if ledgers else None,
        mean_phase2_power=summary.mean_phase2_power,
    )


def formula_rows(config: RunConfig) -> List[ResultRow]:
    """Closed-form rows over the configured K range"""
    low, high = config.k_range
    rows = []
    for k in range(low, high + 1):
        f = dof_formulas(k)
        rows.append(
            ResultRow(
                scheme=config.scheme,
                K=k,
                ledger_ratio=float(f.proposed),
                formula_value=float(f.proposed),
                retro_csit=float(f.retro_csit),
                retro_outputfb=float(f.retro_outputfb),
            )
        )
    return rows


def simulate(config: RunConfig, executor: Optional[EpisodeExecutor] = None) -> List[ResultRow]:
    """Execute one RunConfig into its table rows"""
    if config.scheme == Scheme.FORMULAS:
        return formula_rows(config)

    executor = executor or EpisodeExecutor(workers=config.workers)
    runner = runner_for(config)
    k = config.num_users

    if config.noiseless:
        summary = executor.run(runner, config.system_config(), config.episodes, config.seed)
        return [
            ResultRow(
                scheme=config.scheme,
                K=k,
                formula_value=float(scheme_formula(config.scheme, k)),
                max_decode_error=summary.max_error,
                **_counts(summary),
            )
        ]

    rows, points = [], []
    totals = {"episodes_completed": 0, "episodes_aborted": 0, "episodes_unpaired": 0}
    messages = slots = None
    for snr_db in config.snr_db_list:
        summary = executor.run(runner, config.system_config(snr_db), config.episodes, config.seed)
        counts = _counts(summary)
        for key in totals:
            totals[key] += counts[key]
        if summary.ledgers:
            messages = summary.ledgers[0].messages_decoded
            slots = summary.ledgers[0].slots_consumed
        if summary.mean_sum_rate is not None:
            points.append((snr_db, summary.mean_sum_rate))
        rows.append(
            ResultRow(scheme=config.scheme, K=k, snr_db=snr_db, mean_sum_rate=summary.mean_sum_rate, **counts)
        )

    if messages is None:
        raise SimulationError("no episode completed at any SNR point")
    report = dof_report(config.scheme, k, points, messages, slots)
    rows.append(
        ResultRow(
            scheme=config.scheme,
            K=k,
            ledger_ratio=float(report.ledger_ratio),
            formula_value=float(report.formula_value),
            slope=report.measured_slope,
            **totals,
        )
    )
    return rows


def rows_frame(rows: Iterable[ResultRow]) -> pd.DataFrame:
    """Result rows as a frame with the fixed column order"""
    return pd.DataFrame([row.model_dump(mode="json") for row in rows], columns=RESULT_COLUMNS)


def write_table(frame: pd.DataFrame, comments: Sequence[str], path: Optional[str]) -> None:
    """Write comment lines and CSV to path, or stdout when path is None"""
    def emit(stream: TextIO):
        for line in comments:
            stream.write(f"# {line}\n")
        frame.to_csv(
            stream, index=False, float_format=settings.get_csv_float_format(), lineterminator="\n"
        )

    if path is None:
        emit(sys.stdout)
        return
    with open(path, "w", encoding="utf-8", newline="") as handle:
        emit(handle)
    logger.info("Table written", path=path, rows=len(frame))


def _command_line(argv: Sequence[str]) -> str:
    return "ergodic_ia " + " ".join(shlex.quote(a) for a in argv)


def cmd_run(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Simulate one config or every sweep member"""
    if args.sweep is not None or args.config is not None:
        sweep = (
            sweep_catalog.load_file(args.config)
            if args.config is not None
            else sweep_catalog.get_sweep(args.sweep, seed=args.seed)
        )
        for member in sweep.runs:
            path = member_output_path(args.out, member)
            comments = [_command_line(argv), f"sweep: {sweep.name}", f"config: {member.model_dump_json()}"]
            write_table(rows_frame(simulate(member)), comments, path)
        return EXIT_OK

    config = run_config_from_args(args)
    comments = [_command_line(argv), f"config: {config.model_dump_json()}"]
    write_table(rows_frame(simulate(config)), comments, config.output_path)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Run the property suite and print PASS/FAIL lines"""
    validator = PropertyValidator(
        episodes_per_k=args.episodes_per_k,
        seed=args.seed,
        executor=EpisodeExecutor(workers=args.workers),
    )
    results = validator.run_all()
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status}  {result.name}  {result.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_figures(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Print the closed-form sum-DoF table"""
    low, high = args.k_range
    frame = figure_data(range(low, high + 1))
    write_table(frame, [_command_line(argv)], args.out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    setup_logging(level=args.log_level)
    system_logger.log_startup("cli", command=args.command)

    try:
        if args.command == "run":
            return cmd_run(args, argv)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_figures(args, argv)
    except (ConfigurationError, ValidationError) as e:
        logger.error("Invalid configuration", error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("Filesystem failure", error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except SimulationError as e:
        logger.error("Simulation failed", error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    finally:
        system_logger.log_shutdown("cli", command=args.command)


if __name__ == "__main__":
    sys.exit(main())
