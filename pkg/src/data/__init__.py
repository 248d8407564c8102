"""Synthetic task streams, the IDX loader and the stream cache."""

from src.data.cache import DATA_FORMAT_VERSION, cached_generate, load_stream, save_stream
from src.data.idx import IMAGES_MAGIC, LABELS_MAGIC, idx_stream, load_idx
from src.data.streams import (
    GeneratorKind,
    GeneratorSpec,
    Split,
    Task,
    TaskStream,
    generate,
    permute_task,
    spec_from_provenance,
    split_dataset,
)

__all__: list[str] = [
    "DATA_FORMAT_VERSION",
    "cached_generate",
    "load_stream",
    "save_stream",
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "idx_stream",
    "load_idx",
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
