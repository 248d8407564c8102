from __future__ import annotations

import logging
import sys
import time
import uuid
from contextlib import contextmanager
from typing import Any, Iterator, Optional

# structlog must be imported before its typing helpers
import structlog
from structlog.types import Processor

__all__: list[str] = [
    "configure_logging",
    "run_context",
]


def _ensure_run_context(
    logger: Any,
    method_name: str,
    event_dict: structlog.types.EventDict,
) -> structlog.types.EventDict:
    """Guarantee *run_id* and *command* keys exist in *event_dict*."""

    event_dict.setdefault("run_id", None)
    event_dict.setdefault("command", None)
    return event_dict


_JSON_PROCESSORS: list[Processor] = [
    structlog.contextvars.merge_contextvars,
    _ensure_run_context,
    structlog.processors.add_log_level,
    structlog.processors.TimeStamper(fmt="iso"),
    structlog.processors.JSONRenderer(),
]


def _configure_stdlib_logging(level: int) -> None:
    """Route the built-in *logging* module to a single stderr handler.

    Log lines go to *stderr* so that stdout stays free for the result
    summary printed by the CLI.
    """

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter("%(message)s"))  # structlog formats

    root_logger.handlers.clear()
    root_logger.addHandler(handler)


_LOGGING_CONFIGURED: bool = False


def configure_logging(debug: bool = False) -> None:
    """Initialise `structlog` for the entire process.

    Idempotent: multiple calls are safe but no-op after the first.

    Parameters
    ----------
    debug:
        When *True* lowers the log level to ``DEBUG``; otherwise ``INFO``.
    """

    global _LOGGING_CONFIGURED

    if _LOGGING_CONFIGURED:
        return

    level: int = logging.DEBUG if debug else logging.INFO

    _configure_stdlib_logging(level)

    structlog.configure(
        wrapper_class=structlog.make_filtering_bound_logger(level),
        processors=_JSON_PROCESSORS,
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )

    _LOGGING_CONFIGURED = True


@contextmanager
def run_context(command: str, run_id: Optional[str] = None) -> Iterator[str]:
    """Bind *command* and a *run_id* to every log line emitted inside the block.

    Logs ``command_completed`` (or ``command_failed``) with the elapsed time
    on exit and clears the bound context variables afterwards.
    """

    start: float = time.perf_counter()
    rid: str = run_id or uuid.uuid4().hex
    structlog.contextvars.bind_contextvars(run_id=rid, command=command)
    logger = structlog.get_logger("run")
    failed = False
    try:
        yield rid
    except BaseException:
        failed = True
        raise
    finally:
        duration_ms: float = (time.perf_counter() - start) * 1000
        logger.info(
            "command_failed" if failed else "command_completed",
            duration_ms=round(duration_ms, 2),
        )
        structlog.contextvars.clear_contextvars()
