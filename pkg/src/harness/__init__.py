"""Experiment harness: config, commands, reports and the CLI."""

from __future__ import annotations

from .commands import COMMANDS, run_command
from .config import ExperimentConfig, apply_overrides, load_config
from .errors import EXIT_CONFIG, EXIT_FAILURE, EXIT_MISSING_ARTIFACT, EXIT_OK, report_error
from .reports import REPORT_COLUMNS, REPORT_SCHEMA_VERSION, ReportRow, ReportWriter, summarize

__all__: list[str] = [
    "COMMANDS",
    "run_command",
    "ExperimentConfig",
    "apply_overrides",
    "load_config",
    "EXIT_OK",
    "EXIT_FAILURE",
    "EXIT_CONFIG",
    "EXIT_MISSING_ARTIFACT",
    "report_error",
    "REPORT_COLUMNS",
    "REPORT_SCHEMA_VERSION",
    "ReportRow",
    "ReportWriter",
    "summarize",
]
