"""
strata-eit command-line entry point.

Usage:
    strata-eit <command> --config experiment.json --out results/ [--seed N] [--threads N] [--verbose]

All numerics come from the config file; flags only carry paths, the seed,
the thread count and verbosity. Exit statuses follow the error categories in
core.errors: 2 config, 3 validation, 4 solver, 5 inversion.

Functions:
    - build_parser: argparse parser with one subcommand per experiment
    - load_experiment: Parse and check an experiment config file
    - run: Execute one experiment and write its manifest
    - main: Console-script entry point
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import structlog
from dotenv import load_dotenv
from pydantic import ValidationError

from cli.commands import COMMANDS
from core.errors import StrataConfigError, StrataError
from core.settings import get_settings
from models.specs import ExperimentSpec
from observability.logging import configure_logging
from observability.metrics import strata_experiments_total
from observability.tracing import configure_tracing, span
from services.artifacts import ArtifactWriter

logger = structlog.get_logger(__name__)

U64_MAX = 2**64 - 1


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed <= U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return seed


def _threads(value: str) -> int:
    threads = int(value)
    if threads < 1:
        raise argparse.ArgumentTypeError("threads must be at least 1")
    return threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strata-eit",
        description="Anisotropic layered-conductivity EIT experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, help=f"run a '{name}' experiment")
        cmd.add_argument("--config", type=Path, required=True, help="Experiment JSON file")
        cmd.add_argument("--out", type=Path, required=True, help="Output directory")
        cmd.add_argument("--seed", type=_seed, default=None, help="RNG seed (overrides the config)")
        cmd.add_argument("--threads", type=_threads, default=None, help="Worker threads (default: serial)")
        cmd.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def load_experiment(path: Path, command: Optional[str] = None) -> ExperimentSpec:
    """
    Read an experiment config.

    Relative ``data_csv`` paths are resolved against the config's directory.

    Raises:
        StrataConfigError: Unreadable file, invalid JSON, schema violation,
            command mismatch or a missing referenced file
    """
    try:
        payload = json.loads(Path(path).read_text())
    except OSError as e:
        raise StrataConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise StrataConfigError(f"config {path} is not valid JSON: {e}") from e

    if isinstance(payload, dict) and command is not None:
        payload.setdefault("command", command)
    try:
        spec = ExperimentSpec.model_validate(payload)
    except ValidationError as e:
        raise StrataConfigError(f"config {path} does not match the experiment schema: {e}") from e

    if command is not None and spec.command != command:
        raise StrataConfigError(f"config is a '{spec.command}' experiment, not '{command}'")
    if spec.data_csv is not None:
        data = spec.data_csv if spec.data_csv.is_absolute() else Path(path).parent / spec.data_csv
        if not data.is_file():
            raise StrataConfigError(f"referenced data file {data} does not exist")
        spec = spec.model_copy(update={"data_csv": data})
    return spec


def run(spec: ExperimentSpec, out_dir: Path, seed: Optional[int] = None, threads: int = 1) -> Path:
    """
    Execute one experiment and write its artifacts plus manifest.json.

    Args:
        spec: Parsed experiment
        out_dir: Output directory
        seed: Seed from the command line; falls back to spec.seed
        threads: Worker threads

    Returns:
        Path of the manifest

    Raises:
        StrataConfigError: A randomized experiment has no seed
        StrataError: Any category raised by the experiment
    """
    seed = seed if seed is not None else spec.seed
    if spec.randomized and seed is None:
        raise StrataConfigError(f"'{spec.command}' is randomized and needs a seed (--seed or 'seed')")

    writer = ArtifactWriter(out_dir)
    logger.info("experiment_started", command=spec.command, out=str(out_dir), seed=seed, threads=threads)
    with span("experiment", command=spec.command):
        COMMANDS[spec.command](spec, writer, seed, threads)
    manifest = writer.write_manifest(spec.command, seed)
    strata_experiments_total.labels(command=spec.command, status="ok").inc()
    if get_settings().export_metrics:
        writer.write_metrics()
    return manifest


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv(dotenv_path=Path.cwd() / ".env")
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(verbose=args.verbose, json_logs=settings.log_json, level=settings.log_level)
    configure_tracing(settings.trace_console)

    threads = args.threads if args.threads is not None else settings.threads
    try:
        spec = load_experiment(args.config, args.command)
        run(spec, args.out, seed=args.seed, threads=threads)
    except StrataError as e:
        logger.error("experiment_failed", command=args.command, error=str(e), error_type=type(e).__name__)
        strata_experiments_total.labels(command=args.command, status="error").inc()
        return e.exit_code
    except ValidationError as e:
        # pydantic rejections raised while building core objects
        logger.error("experiment_failed", command=args.command, error=str(e), error_type="ValidationError")
        strata_experiments_total.labels(command=args.command, status="error").inc()
        return StrataConfigError.exit_code

    logger.info("experiment_finished", command=args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
