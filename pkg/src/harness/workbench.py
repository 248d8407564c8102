"""Helpers shared by the experiment commands: artifacts, data, scoring and fan-out."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

from src.core.config import get_settings
from src.core.exceptions import InputError, MissingArtifactError
from src.data.streams import Task, generate, spec_from_provenance
from src.fisher.estimators import empirical_fisher, squisher
from src.fisher.types import FisherDiagonal, Scaling
from src.harness.config import ExperimentConfig
from src.harness.reports import ReportRow, ReportWriter
from src.nn.mlp import accuracy
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint, load_checkpoint

__all__: list[str] = [
    "RunContext",
    "load_required_checkpoint",
    "best_sibling",
    "task_for",
    "held_out_accuracy",
    "importance_for",
    "fan_out",
    "Stopwatch",
]

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class RunContext:
    """State of one CLI command: config, run id, report writer and produced files."""

    config: ExperimentConfig
    run_id: str
    command: str
    outputs: List[Path] = field(default_factory=list)
    notes: Dict[str, object] = field(default_factory=dict)
    report: Optional[ReportWriter] = None

    def __post_init__(self) -> None:
        if self.report is None:
            self.report = ReportWriter(self.out_dir / "report.csv")

    @property
    def out_dir(self) -> Path:
        return self.config.output_dir

    def output(self, name: str) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(path)
        return path

    def row(
        self,
        method: str,
        setting: str,
        metric_name: str,
        metric_value: float,
        *,
        seed: Optional[int] = None,
        wall_time_seconds: Optional[float] = None,
    ) -> ReportRow:
        return ReportRow(
            experiment=self.config.experiment,
            method=method,
            setting=setting,
            seed=self.config.seed if seed is None else seed,
            metric_name=metric_name,
            metric_value=float(metric_value),
            config_checksum=self.config.checksum(),
            wall_time_seconds=wall_time_seconds,
        )

    def record(self, rows: Sequence[ReportRow]) -> List[ReportRow]:
        assert self.report is not None
        self.report.extend(rows)
        return list(rows)


def load_required_checkpoint(path: Path, what: str = "checkpoint") -> Checkpoint:
    if not Path(path).is_file():
        raise MissingArtifactError(str(path), what)
    return load_checkpoint(path)


def best_sibling(path: Path) -> Path:
    """``run/checkpoint.sqsh`` -> ``run/checkpoint_best.sqsh``."""
    return path.with_name(f"{path.stem}_best{path.suffix}")


def task_for(ckpt: Checkpoint) -> Task:
    """Rebuild the task a checkpoint was trained on from its provenance."""
    spec = spec_from_provenance(ckpt.provenance.data)
    stream = generate(spec)
    index = ckpt.provenance.task_index or 0
    if index >= len(stream):
        raise InputError(f"task index {index} outside a stream of {len(stream)} tasks")
    return stream[index]


def held_out_accuracy(ckpt: Checkpoint, params: ParamVector, task: Task) -> float:
    return accuracy(ckpt.mlp_spec, params, task.test[0], task.test[1])


def importance_for(method: str, ckpt: Checkpoint, task: Optional[Task]) -> FisherDiagonal:
    """``fisher``: empirical Fisher on the training split; ``squisher``: from the checkpoint alone."""
    if method == "squisher":
        return squisher(ckpt)
    if method == "fisher":
        if task is None:
            raise InputError("the empirical Fisher needs the training split")
        return empirical_fisher(ckpt.mlp_spec, ckpt.params, task.train, Scaling.SUM_OVER_N)
    raise InputError(f"no importance for method '{method}'")


def fan_out(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    """Map *fn* over *items* on up to ``Settings.threads`` workers, preserving order."""
    workers = get_settings().worker_count(len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


class Stopwatch:
    """``with Stopwatch() as sw: ...`` then ``sw.seconds``."""

    def __init__(self) -> None:
        self.seconds = 0.0
        self._start = 0.0

    def __enter__(self) -> "Stopwatch":
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc: object) -> None:
        self.seconds = time.perf_counter() - self._start
