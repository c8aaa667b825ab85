"""Command-line entry point."""

import argparse
import sys
import tomllib
from collections.abc import Sequence
from pathlib import Path

import orjson
import structlog
from pydantic import ValidationError

from spinlab import __version__
from spinlab.core.executor import configure_executor
from spinlab.exceptions import ConfigParse
from spinlab.main import configure_logging, run
from spinlab.schemas import OutputFormat, RunConfig

logger = structlog.get_logger(__name__)


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a TOML run configuration.

    Raises:
        ConfigParse: The file is missing, is not TOML or does not validate
    """
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigParse(f"cannot read {path}: {exc}", path=str(path)) from exc
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigParse(
            f"invalid configuration {path}",
            path=str(path),
            errors=[error["msg"] for error in exc.errors()],
        ) from exc


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``spinlab`` command."""
    parser = argparse.ArgumentParser(
        prog="spinlab",
        description="Finite-volume checks of lattice spin systems at complex field",
    )
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out", default=None, help="Output directory")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads")
    parser.add_argument("--seed", type=int, default=None, help="Seed for random suites")
    parser.add_argument(
        "--format",
        choices=[fmt.value for fmt in OutputFormat],
        default=None,
        help="Result file format",
    )
    parser.add_argument("--log-level", default=None, help="Log level")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse flags, load the configuration and run it."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(args.config)
    except ConfigParse as exc:
        logger.error("config_rejected", error=exc.error_code, message=exc.message)
        sys.stderr.write(orjson.dumps(exc.to_record()).decode() + "\n")
        return exc.exit_code

    threads = args.threads if args.threads is not None else config.threads
    if threads is not None and threads < 1:
        sys.stderr.write(
            orjson.dumps(ConfigParse("--threads must be positive").to_record()).decode()
            + "\n"
        )
        return 1
    configure_executor(threads)
    return run(
        config,
        out=args.out,
        fmt=OutputFormat(args.format) if args.format else None,
        seed=args.seed,
    )


if __name__ == "__main__":
    sys.exit(main())
