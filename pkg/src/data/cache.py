"""
Cache generated task streams in the shared ``SQSHDATA`` container.

Labels are stored as float64 alongside the features; class ids are small
integers and round-trip exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog

from src.core.container import MAGIC_DATA, read_container, write_container
from src.core.exceptions import ContainerFormatError
from src.data.streams import GeneratorSpec, Task, TaskStream, generate

__all__: list[str] = ["DATA_FORMAT_VERSION", "save_stream", "load_stream", "cached_generate"]

logger = structlog.get_logger(__name__)

DATA_FORMAT_VERSION: int = 1

FloatArray = npt.NDArray[np.float64]


def save_stream(stream: TaskStream, path: Union[str, Path]) -> Path:
    tasks_meta: List[Dict[str, Any]] = []
    arrays: List[Tuple[str, FloatArray]] = []
    for task in stream.tasks:
        tasks_meta.append(
            {
                "task_id": task.task_id,
                "num_classes": task.num_classes,
                "class_ids": list(task.class_ids),
                "n_train": int(task.train[1].size),
                "n_test": int(task.test[1].size),
            }
        )
        prefix = f"task{task.task_id}"
        arrays += [
            (f"{prefix}.train_x", task.train[0]),
            (f"{prefix}.train_y", task.train[1].astype(np.float64)),
            (f"{prefix}.test_x", task.test[0]),
            (f"{prefix}.test_y", task.test[1].astype(np.float64)),
        ]
    header = {
        "dataset_id": stream.dataset_id,
        "dims": stream.dims,
        "spec": stream.spec.model_dump(mode="json") if stream.spec is not None else None,
        "tasks": tasks_meta,
    }
    return write_container(path, MAGIC_DATA, DATA_FORMAT_VERSION, header, arrays)


def load_stream(path: Union[str, Path]) -> TaskStream:
    _, header, arrays = read_container(path, MAGIC_DATA, (DATA_FORMAT_VERSION,))
    try:
        dims = int(header["dims"])
        tasks = []
        for meta in header["tasks"]:
            prefix = f"task{meta['task_id']}"

            def _split(name: str, n: int) -> Tuple[FloatArray, npt.NDArray[np.int64]]:
                xs = arrays[f"{prefix}.{name}_x"].reshape(n, dims)
                ys = arrays[f"{prefix}.{name}_y"].astype(np.int64)
                return xs, ys

            tasks.append(
                Task(
                    task_id=int(meta["task_id"]),
                    train=_split("train", int(meta["n_train"])),
                    test=_split("test", int(meta["n_test"])),
                    num_classes=int(meta["num_classes"]),
                    class_ids=tuple(int(c) for c in meta["class_ids"]),
                )
            )
        spec = GeneratorSpec.model_validate(header["spec"]) if header.get("spec") else None
        return TaskStream(tuple(tasks), str(header["dataset_id"]), spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError("tasks", str(exc)) from exc


def cached_generate(spec: GeneratorSpec, cache_dir: Union[str, Path]) -> TaskStream:
    """Load the stream for *spec* from *cache_dir*, generating and storing it on a miss."""
    path = Path(cache_dir) / f"{spec.kind.value}-{spec.fingerprint()}.sqsh"
    if path.is_file():
        try:
            stream = load_stream(path)
        except ContainerFormatError as exc:
            logger.warning("stream_cache_unreadable", path=str(path), error=str(exc))
        else:
            if stream.spec == spec:
                logger.debug("stream_cache_hit", path=str(path))
                return stream
    stream = generate(spec)
    save_stream(stream, path)
    logger.debug("stream_cache_stored", path=str(path))
    return stream
