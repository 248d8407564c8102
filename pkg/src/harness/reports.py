"""
Report rows, CSV persistence and the run manifest.

The CSV column set is fixed by :data:`REPORT_COLUMNS` and versioned by
:data:`REPORT_SCHEMA_VERSION`. Appends go through one lock per writer so
concurrent trials never interleave rows.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd
import structlog
from tabulate import tabulate

__all__: list[str] = [
    "REPORT_SCHEMA_VERSION",
    "REPORT_COLUMNS",
    "ReportRow",
    "ReportWriter",
    "file_sha256",
    "write_manifest",
    "summarize",
]

logger = structlog.get_logger(__name__)

REPORT_SCHEMA_VERSION: int = 1

REPORT_COLUMNS: tuple[str, ...] = (
    "schema_version",
    "experiment",
    "method",
    "setting",
    "seed",
    "metric_name",
    "metric_value",
    "wall_time_seconds",
    "config_checksum",
)


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    method: str
    setting: str
    seed: int
    metric_name: str
    metric_value: float
    config_checksum: str
    wall_time_seconds: Optional[float] = None
    schema_version: int = REPORT_SCHEMA_VERSION

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


class ReportWriter:
    """Collects rows in memory and appends them to one CSV file."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self.rows: List[ReportRow] = []
        self._lock = threading.Lock()

    def extend(self, rows: Iterable[ReportRow]) -> None:
        batch = list(rows)
        if not batch:
            return
        with self._lock:
            frame = pd.DataFrame([r.as_dict() for r in batch], columns=list(REPORT_COLUMNS))
            self.path.parent.mkdir(parents=True, exist_ok=True)
            write_header = not self.path.exists()
            frame.to_csv(self.path, mode="a", header=write_header, index=False)
            self.rows.extend(batch)
        logger.debug("report_rows_appended", path=str(self.path), rows=len(batch))


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    path: Path,
    *,
    command: str,
    run_id: str,
    config: Mapping[str, Any],
    config_checksum: str,
    outputs: Sequence[Path],
    notes: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write a JSON manifest listing every output with its SHA-256."""
    entries = [
        {"path": str(p), "sha256": file_sha256(p), "bytes": p.stat().st_size}
        for p in sorted(set(outputs))
        if p.is_file()
    ]
    manifest = {
        "command": command,
        "run_id": run_id,
        "config": dict(config),
        "config_checksum": config_checksum,
        "report_schema_version": REPORT_SCHEMA_VERSION,
        "outputs": entries,
        "notes": dict(notes or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    logger.info("manifest_written", path=str(path), outputs=len(entries))
    return path


def summarize(rows: Sequence[ReportRow]) -> str:
    """Mean metric per (method, setting, metric) as a text table."""
    if not rows:
        return "(no report rows)"
    frame = pd.DataFrame([r.as_dict() for r in rows])
    grouped = (
        frame.groupby(["method", "setting", "metric_name"], sort=True)["metric_value"]
        .agg(["mean", "std", "count"])
        .reset_index()
    )
    return tabulate(grouped.values.tolist(), headers=list(grouped.columns), floatfmt=".4f")
