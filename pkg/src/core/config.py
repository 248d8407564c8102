from __future__ import annotations

import os
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

__all__: list[str] = ["Settings", "get_settings"]


class Settings(BaseSettings):
    """
    Process-wide settings, loaded from ``SQUISHER_LAB_*`` environment variables.

    Experiment parameters do not live here; they come from the TOML
    configuration handled by :mod:`src.harness.config`. This class only holds
    knobs that belong to the machine running the lab.
    """

    debug: bool = False
    threads: int = Field(1, ge=1)
    output_dir: Path = Path("runs")

    # Exact enumeration is only run on tiny instances.
    oracle_capacity: int = Field(1_000_000, ge=1)

    # Denominator stabilisers for merging and task distances.
    merge_epsilon: float = Field(1e-10, ge=0.0)
    embed_epsilon: float = Field(1e-12, ge=0.0)

    model_config = SettingsConfigDict(
        env_prefix="SQUISHER_LAB_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("threads", mode="before")
    @classmethod
    def _coerce_threads(cls, v: object) -> object:
        """Treat an empty ``SQUISHER_LAB_THREADS`` as "use the default"."""
        if isinstance(v, str) and not v.strip():
            return 1
        return v

    def worker_count(self, requested: Optional[int] = None) -> int:
        """Return the number of workers to use, capped by :attr:`threads`."""
        if requested is None:
            return self.threads
        return max(1, min(requested, self.threads))


# Public accessor – manual caching to support special behaviour in tests
_CACHED_SETTINGS: Optional[Settings] = None


def get_settings() -> Settings:  # noqa: D401 – accessor helper
    """Return a **singleton** Settings instance unless running under pytest.

    Tests monkeypatch ``SQUISHER_LAB_*`` variables and expect every call to
    see the current environment, so caching is skipped whenever
    ``PYTEST_CURRENT_TEST`` is present.
    """

    global _CACHED_SETTINGS  # noqa: PLW0603 – module-level singleton

    if "PYTEST_CURRENT_TEST" in os.environ:
        return Settings()

    if _CACHED_SETTINGS is None:
        _CACHED_SETTINGS = Settings()

    return _CACHED_SETTINGS


def _clear_settings_cache() -> None:  # noqa: D401 – helper for tests
    """Clear the internal Settings singleton (used by unit-tests)."""

    global _CACHED_SETTINGS
    _CACHED_SETTINGS = None


get_settings.cache_clear = _clear_settings_cache  # type: ignore[attr-defined]
