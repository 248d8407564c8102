from __future__ import annotations

import json
import sys
from typing import Any, Dict, TextIO

import structlog

from src.core.exceptions import ConfigError, MissingArtifactError, SquisherLabError

__all__: list[str] = [
    "EXIT_OK",
    "EXIT_FAILURE",
    "EXIT_CONFIG",
    "EXIT_MISSING_ARTIFACT",
    "build_error_payload",
    "exit_code_for",
    "report_error",
]

logger = structlog.get_logger("errors")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3


def build_error_payload(
    code: str,
    message: str,
    run_id: str | None = None,
    extra: Dict[str, Any] | None = None,
) -> Dict[str, Any]:
    """Return a JSON-serialisable error envelope.

    Parameters
    ----------
    code:
        Machine-readable error code (snake_case).
    message:
        Human-readable description.
    run_id:
        Correlation ID bound by :func:`src.core.logging.run_context`.
    extra:
        Optional details, e.g. the list of config problems.
    """
    payload: Dict[str, Any] = {"error": {"code": code, "message": message, "run_id": run_id}}
    if extra:
        payload["error"].update(extra)
    return payload


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, MissingArtifactError):
        return EXIT_MISSING_ARTIFACT
    return EXIT_FAILURE


def _code_for(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config_error"
    if isinstance(exc, MissingArtifactError):
        return "missing_artifact"
    if isinstance(exc, SquisherLabError):
        return "lab_error"
    return "internal_error"


def report_error(exc: BaseException, run_id: str | None = None, stream: TextIO | None = None) -> int:
    """Print the envelope for *exc* to stderr and return the process exit code."""
    extra: Dict[str, Any] = {"type": type(exc).__name__}
    if isinstance(exc, ConfigError):
        extra["details"] = exc.errors
    if isinstance(exc, MissingArtifactError):
        extra["path"] = exc.path
    payload = build_error_payload(_code_for(exc), str(exc), run_id, extra)
    print(json.dumps(payload), file=stream if stream is not None else sys.stderr)
    code = exit_code_for(exc)
    logger.warning("command_error", code=payload["error"]["code"], exit_code=code)
    return code
