from __future__ import annotations

import json
import logging
from unittest.mock import patch

import pytest
import structlog

import src.core.logging
from src.core.logging import configure_logging, run_context

pytestmark = pytest.mark.unit


@pytest.fixture(autouse=True)
def reset_logging_state(monkeypatch: pytest.MonkeyPatch):
    """Reset the module flag, structlog defaults and root handlers around each test."""
    monkeypatch.setattr("src.core.logging._LOGGING_CONFIGURED", False)
    structlog.reset_defaults()
    root_logger = logging.getLogger()
    original_handlers = root_logger.handlers[:]
    root_logger.handlers.clear()

    yield

    structlog.reset_defaults()
    structlog.contextvars.clear_contextvars()
    root_logger.handlers.clear()
    for handler in original_handlers:
        root_logger.addHandler(handler)


def test_configure_logging_idempotency() -> None:
    with (
        patch("src.core.logging._configure_stdlib_logging") as mock_stdlib_config,
        patch("structlog.configure") as mock_structlog_config,
    ):
        configure_logging(debug=True)
        assert src.core.logging._LOGGING_CONFIGURED is True
        mock_stdlib_config.assert_called_once_with(logging.DEBUG)
        mock_structlog_config.assert_called_once()

        mock_stdlib_config.reset_mock()
        mock_structlog_config.reset_mock()

        configure_logging(debug=False)
        mock_stdlib_config.assert_not_called()
        mock_structlog_config.assert_not_called()


def test_configure_logging_sets_info_level_by_default() -> None:
    with (
        patch("src.core.logging._configure_stdlib_logging") as mock_stdlib_config,
        patch("structlog.make_filtering_bound_logger") as mock_make_filtering_logger,
        patch("structlog.configure") as mock_structlog_config,
    ):
        configure_logging()

        mock_stdlib_config.assert_called_once_with(logging.INFO)
        mock_make_filtering_logger.assert_called_once_with(logging.INFO)
        assert (
            mock_structlog_config.call_args[1]["wrapper_class"]
            == mock_make_filtering_logger.return_value
        )


def test_stdlib_logging_routes_to_single_stderr_handler() -> None:
    src.core.logging._configure_stdlib_logging(logging.WARNING)
    root_logger = logging.getLogger()
    assert root_logger.level == logging.WARNING
    assert len(root_logger.handlers) == 1


def _json_lines(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


def test_run_context_binds_run_id_and_command(capsys: pytest.CaptureFixture[str]) -> None:
    configure_logging()
    with run_context("merge", run_id="abc123") as rid:
        structlog.get_logger("t").info("inside_run", value=1)
    assert rid == "abc123"

    lines = _json_lines(capsys.readouterr().err)
    inside = next(line for line in lines if line["event"] == "inside_run")
    assert inside["run_id"] == "abc123"
    assert inside["command"] == "merge"
    assert inside["level"] == "info"
    done = next(line for line in lines if line["event"] == "command_completed")
    assert "duration_ms" in done


def test_run_context_logs_failure_and_clears_context(capsys: pytest.CaptureFixture[str]) -> None:
    configure_logging()
    with pytest.raises(RuntimeError):
        with run_context("prune"):
            raise RuntimeError("boom")
    structlog.get_logger("t").info("after_run")

    lines = _json_lines(capsys.readouterr().err)
    assert any(line["event"] == "command_failed" for line in lines)
    after = next(line for line in lines if line["event"] == "after_run")
    assert after["run_id"] is None
    assert after["command"] is None


def test_run_context_generates_run_id() -> None:
    with run_context("train") as rid:
        assert len(rid) == 32
