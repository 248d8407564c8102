"""
Sequential training over a task stream with EWC anchors.

One network carries every task. In the ``task`` scenario each task owns a
contiguous slice of the output layer (its head) and is trained and scored
on that slice with local labels. ``domain`` shares one head of C outputs
across tasks; ``class`` grows the visible slice as tasks arrive and uses
dataset-level labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from src.core.exceptions import AccumulatorUnavailableError, InputError
from src.core.rng import derive_rng
from src.data.streams import Task, TaskStream
from src.ewc.penalty import (
    AnchorPolicy,
    EwcAnchor,
    EwcConfig,
    combine_anchors,
    ewc_penalty,
)
from src.fisher.estimators import batched_joint_empirical_fisher, empirical_fisher, squisher
from src.fisher.types import FisherDiagonal, FisherKind, Scaling
from src.nn.mlp import Activation, HeadSlice, MlpSpec, accuracy, init_params
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint, Provenance
from src.optim.training import Regularizer, TrainSettings, new_state, train

__all__: list[str] = [
    "ImportanceSource",
    "Scenario",
    "ContinualSettings",
    "AccuracyMatrix",
    "ContinualResult",
    "task_importance",
    "run_task_incremental",
]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]


class ImportanceSource(str, Enum):
    FISHER = "fisher"
    SQUISHER = "squisher"
    JOINT = "joint"
    IDENTITY = "identity"
    NONE = "none"


class Scenario(str, Enum):
    TASK = "task"
    DOMAIN = "domain"
    CLASS = "class"


@dataclass(frozen=True)
class ContinualSettings:
    hidden: Tuple[int, ...] = (32,)
    activation: Activation = Activation.RELU
    training: TrainSettings = field(default_factory=TrainSettings)
    scenario: Scenario = Scenario.TASK
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True, eq=False)
class AccuracyMatrix:
    """``values[stage, task]``: accuracy on *task* after training through *stage*; NaN if unseen."""

    values: FloatArray

    @property
    def num_tasks(self) -> int:
        return int(self.values.shape[1])

    @property
    def final(self) -> FloatArray:
        return self.values[-1]

    def final_mean(self) -> float:
        return float(np.mean(self.final))

    def to_rows(self, **extra: Any) -> List[Dict[str, Any]]:
        rows: List[Dict[str, Any]] = []
        for stage in range(self.values.shape[0]):
            for task in range(stage + 1):
                rows.append(
                    {
                        "stage": stage,
                        "task": task,
                        "accuracy": float(self.values[stage, task]),
                        **extra,
                    }
                )
        return rows

    def write_csv(self, path: Union[str, Path], **extra: Any) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(self.to_rows(**extra)).to_csv(target, index=False)
        return target


@dataclass
class ContinualResult:
    matrix: AccuracyMatrix
    params: ParamVector
    anchors: List[EwcAnchor]
    spec: MlpSpec


def _layout(stream: TaskStream, scenario: Scenario) -> Tuple[int, List[HeadSlice], List[int]]:
    """Output width, per-task training slice and per-task label offset."""
    slices: List[HeadSlice] = []
    offsets: List[int] = []
    if scenario is Scenario.DOMAIN:
        width = max(t.num_classes for t in stream.tasks)
        return width, [(0, t.num_classes) for t in stream.tasks], [0] * len(stream)
    cursor = 0
    for task in stream.tasks:
        if scenario is Scenario.TASK:
            slices.append((cursor, cursor + task.num_classes))
            offsets.append(0)
        else:
            slices.append((0, cursor + task.num_classes))
            offsets.append(cursor)
        cursor += task.num_classes
    return cursor, slices, offsets


def task_importance(
    source: ImportanceSource,
    spec: MlpSpec,
    params: ParamVector,
    task_data: Tuple[Any, Any],
    checkpoint: Optional[Checkpoint],
    head_slice: HeadSlice,
    batch_size: int,
) -> Optional[FisherDiagonal]:
    """Importance of every parameter for a finished task, or ``None`` for ``none``."""
    n = len(task_data[1])
    if source is ImportanceSource.NONE:
        return None
    if source is ImportanceSource.FISHER:
        return empirical_fisher(
            spec, params, task_data, Scaling.MEAN_OVER_N, head_slice=head_slice
        )
    if source is ImportanceSource.SQUISHER:
        if checkpoint is None:
            raise InputError("squisher importance needs the task's checkpoint")
        return squisher(checkpoint)
    if source is ImportanceSource.JOINT:
        return batched_joint_empirical_fisher(
            spec, params, task_data, batch_size, head_slice=head_slice
        )
    ones = params.with_values(np.ones(len(params)))
    return FisherDiagonal(ones, FisherKind.IDENTITY, Scaling.MEAN_OVER_N, n)


def run_task_incremental(
    stream: TaskStream,
    cfg: EwcConfig,
    fisher_source: ImportanceSource | str,
    settings: Optional[ContinualSettings] = None,
) -> ContinualResult:
    """Train every task in order, anchoring to earlier ones, and score all seen tasks after each.

    Raises:
        AccumulatorUnavailableError: for the Squisher source with an SGD optimizer.
    """
    settings = settings or ContinualSettings()
    source = ImportanceSource(fisher_source)
    training = settings.training
    if source is ImportanceSource.SQUISHER and not training.optimizer.adaptive:
        raise AccumulatorUnavailableError("squisher importance needs an adaptive optimizer")

    width, slices, offsets = _layout(stream, settings.scenario)
    spec = MlpSpec((stream.dims, *settings.hidden, width), settings.activation)
    params = init_params(spec, derive_rng(settings.seed, "ewc", "init"))

    num_tasks = len(stream)
    matrix = np.full((num_tasks, num_tasks), np.nan)
    anchors: List[EwcAnchor] = []
    running: Optional[EwcAnchor] = None

    for t, task in enumerate(stream.tasks):
        xs, ys = task.train
        labels = ys + offsets[t]
        active = [running] if running is not None else anchors
        regularizer: Optional[Regularizer] = None
        if active and cfg.lam > 0.0:
            regularizer = partial(ewc_penalty, anchors=tuple(active), cfg=cfg)

        state = new_state(training, params)
        result = train(
            spec,
            params,
            state,
            (xs, labels),
            training,
            derive_rng(settings.seed, "ewc", t, "shuffle"),
            head_slice=slices[t],
            regularizer=regularizer,
        )
        params = result.params

        ckpt = Checkpoint(
            spec,
            params,
            result.state,
            Provenance(
                dataset_id=stream.dataset_id,
                dataset_size=task.n_train,
                batch_size=training.batch_size,
                steps=result.state.t,
                seed=settings.seed,
                task_index=t,
                dropped_partial_batches=result.dropped_partial_batches,
            ),
        )
        importance = task_importance(
            source, spec, params, (xs, labels), ckpt, slices[t], training.batch_size
        )
        if importance is not None:
            anchor = EwcAnchor(params, importance, t)
            if cfg.anchor_policy is AnchorPolicy.RUNNING_SUM:
                running = combine_anchors(running, anchor)
            anchors.append(anchor)

        for seen in range(t + 1):
            matrix[t, seen] = _score(
                spec, params, stream.tasks[seen], settings.scenario, slices, offsets, t, seen
            )
        logger.info(
            "task_finished",
            task=t,
            source=source.value,
            mean_accuracy=float(np.nanmean(matrix[t, : t + 1])),
        )

    return ContinualResult(AccuracyMatrix(matrix), params, anchors, spec)


def _score(
    spec: MlpSpec,
    params: ParamVector,
    task: Task,
    scenario: Scenario,
    slices: List[HeadSlice],
    offsets: List[int],
    stage: int,
    index: int,
) -> float:
    xs, ys = task.test
    if scenario is Scenario.CLASS:
        # every class seen so far competes
        return accuracy(spec, params, xs, ys + offsets[index], slices[stage])
    return accuracy(spec, params, xs, ys, slices[index])
