"""
Binary container shared by checkpoints, Fisher diagonals and cached datasets.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic, e.g. b"SQSHCKPT"
    8       4     format_version (u32)
    12      8     header length H in bytes (u64)
    20      H     UTF-8 JSON header; must contain "arrays": [[name, length], ...]
    20+H    ...   float64 arrays in header order, raw little-endian

Floats in the header go through ``json`` which round-trips Python floats
exactly; arrays are written byte-for-byte, so a decode of an encode is
bit-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog

from src.core.exceptions import ContainerFormatError

__all__: list[str] = [
    "MAGIC_CHECKPOINT",
    "MAGIC_FISHER",
    "MAGIC_DATA",
    "encode_container",
    "decode_container",
    "write_container",
    "read_container",
]

logger = structlog.get_logger(__name__)

MAGIC_CHECKPOINT: bytes = b"SQSHCKPT"
MAGIC_FISHER: bytes = b"SQSHFISH"
MAGIC_DATA: bytes = b"SQSHDATA"

_PREFIX = struct.Struct("<8sIQ")
_F64 = np.dtype("<f8")

FloatArray = npt.NDArray[np.float64]
PathLike = Union[str, Path]


def encode_container(
    magic: bytes,
    version: int,
    header: Mapping[str, Any],
    arrays: Sequence[Tuple[str, FloatArray]],
) -> bytes:
    """Serialise *header* and named float64 *arrays* into container bytes."""
    if len(magic) != 8:
        raise ValueError("container magic must be exactly 8 bytes")
    full_header: Dict[str, Any] = dict(header)
    full_header["arrays"] = [[name, int(np.asarray(a).size)] for name, a in arrays]
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    parts: List[bytes] = [_PREFIX.pack(magic, version, len(header_bytes)), header_bytes]
    for _, array in arrays:
        parts.append(np.ascontiguousarray(array, dtype=_F64).ravel().tobytes())
    return b"".join(parts)


def _parse_array_table(header: Mapping[str, Any]) -> List[Tuple[str, int]]:
    table = header.get("arrays")
    if not isinstance(table, list):
        raise ContainerFormatError("arrays", "array table missing from header")
    parsed: List[Tuple[str, int]] = []
    for entry in table:
        if (
            not isinstance(entry, list)
            or len(entry) != 2
            or not isinstance(entry[0], str)
            or not isinstance(entry[1], int)
            or entry[1] < 0
        ):
            raise ContainerFormatError("arrays", f"malformed entry {entry!r}")
        parsed.append((entry[0], entry[1]))
    return parsed


def decode_container(
    payload: bytes,
    magic: bytes,
    supported_versions: Sequence[int],
) -> Tuple[int, Dict[str, Any], Dict[str, FloatArray]]:
    """Decode container bytes into *(version, header, arrays)*.

    Raises:
        ContainerFormatError: naming the field that failed (``magic``,
            ``format_version``, ``header``, ``arrays`` or ``payload``).
    """
    if len(payload) < _PREFIX.size:
        raise ContainerFormatError(
            "payload", f"truncated prefix ({len(payload)} of {_PREFIX.size} bytes)"
        )
    found_magic, version, header_len = _PREFIX.unpack_from(payload, 0)
    if found_magic != magic:
        raise ContainerFormatError(
            "magic", f"expected {magic!r}, found {found_magic!r}"
        )
    if version not in supported_versions:
        raise ContainerFormatError(
            "format_version",
            f"unsupported version {version}; supported: {list(supported_versions)}",
        )
    body_start = _PREFIX.size + header_len
    if len(payload) < body_start:
        raise ContainerFormatError("header", "truncated JSON header")
    try:
        header = json.loads(payload[_PREFIX.size : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError("header", f"invalid JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise ContainerFormatError("header", "header is not a JSON object")

    table = _parse_array_table(header)
    expected = body_start + 8 * sum(n for _, n in table)
    if len(payload) != expected:
        raise ContainerFormatError(
            "payload",
            f"expected {expected} bytes, found {len(payload)}",
        )
    arrays: Dict[str, FloatArray] = {}
    offset = body_start
    for name, length in table:
        chunk = np.frombuffer(payload, dtype=_F64, count=length, offset=offset)
        arrays[name] = chunk.astype(np.float64, copy=True)
        offset += 8 * length
    return int(version), header, arrays


def write_container(
    path: PathLike,
    magic: bytes,
    version: int,
    header: Mapping[str, Any],
    arrays: Sequence[Tuple[str, FloatArray]],
) -> Path:
    """Encode and write a container, creating parent directories."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    data = encode_container(magic, version, header, arrays)
    target.write_bytes(data)
    logger.debug("container_written", path=str(target), magic=magic.decode(), size=len(data))
    return target


def read_container(
    path: PathLike,
    magic: bytes,
    supported_versions: Sequence[int],
) -> Tuple[int, Dict[str, Any], Dict[str, FloatArray]]:
    """Read and decode a container file."""
    return decode_container(Path(path).read_bytes(), magic, supported_versions)
