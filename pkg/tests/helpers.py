"""Shared test helpers: checkpoint factory, finite differences, IDX writer, gradient stubs."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence

import numpy as np

from src.core.rng import derive_rng
from src.data.idx import IMAGES_MAGIC, LABELS_MAGIC
from src.data.streams import Task
from src.nn.mlp import LabelSource, MlpSpec, PerExampleGradient, init_params
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint, Provenance
from src.optim.training import TrainSettings, new_state, train


def make_checkpoint(
    spec: MlpSpec,
    task: Task,
    settings: TrainSettings,
    *,
    seed: int = 0,
    data: Dict[str, Any] | None = None,
    dataset_id: str = "tests",
) -> Checkpoint:
    """Train *spec* on *task* and wrap the result the way the train command does."""
    params = init_params(spec, derive_rng(seed, "train", "init"))
    result = train(
        spec,
        params,
        new_state(settings, params),
        task.train,
        settings,
        derive_rng(seed, "train", "shuffle"),
    )
    provenance = Provenance(
        dataset_id=dataset_id,
        dataset_size=task.n_train,
        batch_size=settings.batch_size,
        steps=result.state.t,
        seed=seed,
        task_index=task.task_id,
        data=data,
        dropped_partial_batches=result.dropped_partial_batches,
    )
    return Checkpoint(spec, result.params, result.state, provenance)


def finite_difference(fn: Callable[[np.ndarray], float], values: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    grad = np.zeros_like(values)
    for i in range(values.size):
        up, down = values.copy(), values.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def write_idx(
    directory: Path,
    images: np.ndarray,
    labels: Sequence[int],
    *,
    compress: bool = False,
    stem: str = "set",
) -> tuple[Path, Path]:
    """Write an IDX image/label pair; the reference writer for the reader tests."""
    n, rows, cols = images.shape
    image_bytes = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes()
    label_bytes = struct.pack(">II", LABELS_MAGIC, len(labels)) + bytes(int(v) for v in labels)
    if compress:
        image_bytes, label_bytes = gzip.compress(image_bytes), gzip.compress(label_bytes)
    images_path = directory / f"{stem}-images.idx"
    labels_path = directory / f"{stem}-labels.idx"
    images_path.write_bytes(image_bytes)
    labels_path.write_bytes(label_bytes)
    return images_path, labels_path


def stub_provider(gradients: Sequence[Sequence[float]]) -> Callable[..., List[PerExampleGradient]]:
    """Gradient provider returning fixed per-example gradients in a single group."""
    template = ParamVector.from_arrays([("w", np.zeros(len(gradients[0])))])

    def provider(spec: Any, params: Any, data: Any, *, label_source: LabelSource = LabelSource.EMPIRICAL, head_slice: Any = None) -> List[PerExampleGradient]:
        return [
            PerExampleGradient(template.with_values(g), i, label_source)
            for i, g in enumerate(gradients)
        ]

    return provider
