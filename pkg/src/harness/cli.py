"""Command-line entry point: ``squisher-lab <command> --config run.toml [--set key=value ...]``."""

from __future__ import annotations

import argparse
from pathlib import Path
from typing import List, Optional, Sequence

import structlog

from src.core.config import get_settings
from src.core.exceptions import SquisherLabError
from src.core.logging import configure_logging, run_context
from src.harness.commands import COMMANDS, run_command
from src.harness.config import load_config
from src.harness.errors import EXIT_OK, report_error
from src.harness.reports import ReportRow, summarize

__all__: list[str] = ["build_parser", "main"]

logger = structlog.get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="squisher-lab",
        description="Fisher-information experiments from optimizer state.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="experiment to run")
    parser.add_argument("--config", type=Path, default=None, help="TOML experiment config")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value by dotted key (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=None, help="override the output directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(get_settings().debug)

    run_id: Optional[str] = None
    rows: List[ReportRow] = []
    try:
        config = load_config(args.config, args.overrides, seed=args.seed, output_dir=args.out)
        with run_context(args.command) as run_id:
            rows, manifest = run_command(args.command, config, run_id)
            logger.info("manifest_ready", path=str(manifest), rows=len(rows))
    except Exception as exc:  # noqa: BLE001 – mapped to an exit code and envelope
        if not isinstance(exc, SquisherLabError):
            logger.exception("unexpected_error")
        return report_error(exc, run_id)

    print(summarize(rows))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
