"""
Reader for IDX image/label files (the classic MNIST distribution format).

    images: >u4 magic 0x00000803, >u4 count, >u4 rows, >u4 cols, then uint8 pixels
    labels: >u4 magic 0x00000801, >u4 count, then uint8 labels

Files may be gzip-compressed; compression is detected from the content, not
the file name. Every format failure raises :class:`IdxFormatError` with the
byte offset where reading stopped.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog

from src.core.exceptions import IdxFormatError, MissingArtifactError
from src.data.streams import Split, TaskStream, split_dataset

__all__: list[str] = ["IMAGES_MAGIC", "LABELS_MAGIC", "load_idx", "idx_stream"]

logger = structlog.get_logger(__name__)

IMAGES_MAGIC: int = 0x00000803
LABELS_MAGIC: int = 0x00000801

_GZIP_MAGIC = b"\x1f\x8b"


def _read_bytes(path: Union[str, Path]) -> bytes:
    source = Path(path)
    if not source.is_file():
        raise MissingArtifactError(str(source), "IDX file")
    raw = source.read_bytes()
    if raw[:2] == _GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(0, f"corrupt gzip stream in {source}: {exc}") from exc
    return raw


def _header(raw: bytes, fields: int, magic: int, what: str) -> Tuple[int, ...]:
    size = 4 * fields
    if len(raw) < size:
        raise IdxFormatError(len(raw), f"{what} header truncated")
    values = struct.unpack(">" + "I" * fields, raw[:size])
    if values[0] != magic:
        raise IdxFormatError(0, f"{what} magic 0x{values[0]:08x}, expected 0x{magic:08x}")
    return values


def _body(raw: bytes, offset: int, count: int, what: str) -> npt.NDArray[np.uint8]:
    end = offset + count
    if len(raw) < end:
        raise IdxFormatError(len(raw), f"{what} truncated: expected {end} bytes")
    if len(raw) > end:
        raise IdxFormatError(end, f"{what} has {len(raw) - end} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset)


def load_idx(
    images_path: Union[str, Path], labels_path: Union[str, Path]
) -> Tuple[npt.NDArray[np.float64], npt.NDArray[np.int64]]:
    """Return images as ``(n, rows*cols)`` floats in [0, 1] and integer labels."""
    images_raw = _read_bytes(images_path)
    labels_raw = _read_bytes(labels_path)
    _, n_images, rows, cols = _header(images_raw, 4, IMAGES_MAGIC, "images")
    _, n_labels = _header(labels_raw, 2, LABELS_MAGIC, "labels")
    if n_images != n_labels:
        raise IdxFormatError(4, f"{n_images} images but {n_labels} labels")

    pixels = _body(images_raw, 16, n_images * rows * cols, "images")
    labels = _body(labels_raw, 8, n_labels, "labels")
    images = pixels.reshape(n_images, rows * cols).astype(np.float64) / 255.0
    logger.info("idx_loaded", images=n_images, rows=rows, cols=cols)
    return images, labels.astype(np.int64)


def idx_stream(
    train: Split, test: Split, groups: Sequence[Sequence[int]], dataset_id: str = "idx"
) -> TaskStream:
    """Split an IDX dataset into label-group tasks (e.g. five pairs of digits)."""
    return TaskStream(tuple(split_dataset(train, test, groups)), dataset_id)
