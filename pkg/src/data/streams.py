"""
Deterministic synthetic task streams.

Every random draw comes from ``derive_rng(seed, "data", <task>, <purpose>)``,
so a stream's first tasks do not change when more tasks are requested, and
train and test samples come from different generators.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.exceptions import InputError, LayoutError
from src.core.rng import derive_rng

__all__: list[str] = [
    "GeneratorKind",
    "GeneratorSpec",
    "Split",
    "Task",
    "TaskStream",
    "generate",
    "permute_task",
    "spec_from_provenance",
    "split_dataset",
]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
Split = Tuple[FloatArray, IntArray]


class GeneratorKind(str, Enum):
    GAUSSIAN_BLOBS = "gaussian_blobs"
    SPLIT_CLASSES = "split_classes"
    PERMUTED_FEATURES = "permuted_features"


class GeneratorSpec(BaseModel):
    """Recipe for a synthetic task stream; identical specs give identical data.

    ``gaussian_blobs`` draws *num_tasks* independent tasks of *classes*
    clusters each. ``split_classes`` draws one dataset of *classes* clusters
    and cuts it into tasks of *classes_per_task* consecutive labels.
    ``permuted_features`` draws one dataset and applies a fixed random
    feature permutation per task (task 0 keeps the identity).
    """

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    kind: GeneratorKind = GeneratorKind.GAUSSIAN_BLOBS
    dims: int = Field(8, ge=1, le=4096)
    classes: int = Field(2, ge=2)
    samples_per_class: int = Field(50, ge=1)
    test_samples_per_class: int = Field(20, ge=1)
    noise_scale: float = Field(1.0, ge=0.0)
    centroid_scale: float = Field(2.0, gt=0.0)
    num_tasks: int = Field(1, ge=1)
    classes_per_task: Optional[int] = Field(None, ge=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_split(self) -> "GeneratorSpec":
        if self.kind is GeneratorKind.SPLIT_CLASSES:
            per_task = self.classes_per_task or 2
            if per_task * self.num_tasks != self.classes:
                raise ValueError(
                    f"split_classes needs classes == num_tasks * classes_per_task "
                    f"({self.classes} != {self.num_tasks} * {per_task})"
                )
        return self

    def fingerprint(self) -> str:
        text = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Task:
    """One context of a stream. Labels are local: ``[0, num_classes)``.

    ``class_ids`` maps each local label to its label in the underlying
    dataset (used by class-incremental runs).
    """

    task_id: int
    train: Split
    test: Split
    num_classes: int
    class_ids: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        for name, (xs, ys) in (("train", self.train), ("test", self.test)):
            if xs.ndim != 2 or xs.shape[0] != ys.shape[0]:
                raise LayoutError(f"task {self.task_id} {name} split has inconsistent shapes")
            if ys.size and (ys.min() < 0 or ys.max() >= self.num_classes):
                raise InputError(f"task {self.task_id} {name} labels out of range")
        if not self.class_ids:
            object.__setattr__(self, "class_ids", tuple(range(self.num_classes)))

    @property
    def dims(self) -> int:
        return int(self.train[0].shape[1])

    @property
    def n_train(self) -> int:
        return int(self.train[1].shape[0])


@dataclass(frozen=True, eq=False)
class TaskStream:
    tasks: Tuple[Task, ...]
    dataset_id: str
    spec: Optional[GeneratorSpec] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise InputError("a task stream needs at least one task")
        dims = {t.dims for t in self.tasks}
        if len(dims) != 1:
            raise LayoutError(f"tasks disagree on feature dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]

    @property
    def dims(self) -> int:
        return self.tasks[0].dims

    @property
    def total_classes(self) -> int:
        return sum(t.num_classes for t in self.tasks)


def _centroids(spec: GeneratorSpec, task: Any, count: int) -> FloatArray:
    rng = derive_rng(spec.seed, "data", task, "centroids")
    return spec.centroid_scale * rng.standard_normal((count, spec.dims))


def _sample(
    spec: GeneratorSpec, centroids: FloatArray, per_class: int, task: Any, purpose: str
) -> Split:
    """*per_class* noisy copies of every centroid, shuffled."""
    rng = derive_rng(spec.seed, "data", task, purpose)
    count = centroids.shape[0]
    labels = np.repeat(np.arange(count, dtype=np.int64), per_class)
    xs = centroids[labels] + spec.noise_scale * rng.standard_normal((labels.size, spec.dims))
    order = derive_rng(spec.seed, "data", task, purpose, "order").permutation(labels.size)
    return xs[order], labels[order]


def _select(split: Split, class_ids: Sequence[int]) -> Split:
    xs, ys = split
    keep = np.isin(ys, class_ids)
    local = np.searchsorted(np.asarray(class_ids), ys[keep]).astype(np.int64)
    return xs[keep], local


def split_dataset(
    train: Split, test: Split, groups: Sequence[Sequence[int]]
) -> List[Task]:
    """Cut one labelled dataset into tasks, one per group of labels."""
    seen: List[int] = []
    tasks: List[Task] = []
    for task_id, group in enumerate(groups):
        class_ids = sorted(int(c) for c in group)
        if set(class_ids) & set(seen):
            raise InputError("label groups must be disjoint")
        seen.extend(class_ids)
        tasks.append(
            Task(
                task_id=task_id,
                train=_select(train, class_ids),
                test=_select(test, class_ids),
                num_classes=len(class_ids),
                class_ids=tuple(class_ids),
            )
        )
    return tasks


def permute_task(task: Task, permutation: Sequence[int], task_id: Optional[int] = None) -> Task:
    """Apply one fixed feature permutation to both splits of *task*."""
    perm = np.asarray(permutation, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(task.dims)):
        raise InputError("permutation must reorder every feature exactly once")
    return Task(
        task_id=task.task_id if task_id is None else task_id,
        train=(task.train[0][:, perm], task.train[1]),
        test=(task.test[0][:, perm], task.test[1]),
        num_classes=task.num_classes,
        class_ids=task.class_ids,
    )


def _blobs(spec: GeneratorSpec) -> List[Task]:
    tasks = []
    for t in range(spec.num_tasks):
        centroids = _centroids(spec, t, spec.classes)
        tasks.append(
            Task(
                task_id=t,
                train=_sample(spec, centroids, spec.samples_per_class, t, "train"),
                test=_sample(spec, centroids, spec.test_samples_per_class, t, "test"),
                num_classes=spec.classes,
            )
        )
    return tasks


def _split_classes(spec: GeneratorSpec) -> List[Task]:
    centroids = _centroids(spec, "base", spec.classes)
    train = _sample(spec, centroids, spec.samples_per_class, "base", "train")
    test = _sample(spec, centroids, spec.test_samples_per_class, "base", "test")
    per_task = spec.classes_per_task or 2
    groups = [range(t * per_task, (t + 1) * per_task) for t in range(spec.num_tasks)]
    return split_dataset(train, test, groups)


def _permuted(spec: GeneratorSpec) -> List[Task]:
    centroids = _centroids(spec, "base", spec.classes)
    base = Task(
        task_id=0,
        train=_sample(spec, centroids, spec.samples_per_class, "base", "train"),
        test=_sample(spec, centroids, spec.test_samples_per_class, "base", "test"),
        num_classes=spec.classes,
    )
    tasks = [base]
    for t in range(1, spec.num_tasks):
        perm = derive_rng(spec.seed, "data", t, "permutation").permutation(spec.dims)
        tasks.append(permute_task(base, perm, task_id=t))
    return tasks


_GENERATORS = {
    GeneratorKind.GAUSSIAN_BLOBS: _blobs,
    GeneratorKind.SPLIT_CLASSES: _split_classes,
    GeneratorKind.PERMUTED_FEATURES: _permuted,
}


def generate(spec: GeneratorSpec) -> TaskStream:
    """Build the task stream described by *spec*."""
    tasks = _GENERATORS[spec.kind](spec)
    stream = TaskStream(tuple(tasks), f"{spec.kind.value}-{spec.fingerprint()}", spec)
    logger.debug(
        "stream_generated",
        kind=spec.kind.value,
        tasks=len(stream),
        dims=spec.dims,
        dataset_id=stream.dataset_id,
    )
    return stream


def spec_from_provenance(raw: Optional[Dict[str, Any]]) -> GeneratorSpec:
    """Rebuild the generator spec stored in a checkpoint's provenance."""
    if raw is None:
        raise InputError("checkpoint provenance carries no data spec")
    return GeneratorSpec.model_validate(raw)
