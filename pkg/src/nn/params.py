"""
Flat parameter vectors.

Every quantity that lives in parameter space (weights, gradients, Fisher
diagonals, optimizer moments, masks) is a flat float64 vector plus an
ordered group table. Two vectors can be combined only when their group
tables are identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from src.core.exceptions import LayoutError

__all__: list[str] = ["ParamGroup", "ParamVector", "Layout", "layout_checksum"]

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class ParamGroup:
    """One named tensor inside the flat vector."""

    name: str
    offset: int
    length: int
    shape: Tuple[int, ...]

    def to_json(self) -> List[Any]:
        return [self.name, self.offset, self.length, list(self.shape)]

    @classmethod
    def from_json(cls, raw: Sequence[Any]) -> "ParamGroup":
        name, offset, length, shape = raw
        return cls(str(name), int(offset), int(length), tuple(int(s) for s in shape))


Layout = Tuple[ParamGroup, ...]


def _check_partition(groups: Layout, size: int) -> None:
    cursor = 0
    for group in groups:
        if group.offset != cursor:
            raise LayoutError(
                f"group '{group.name}' starts at {group.offset}, expected {cursor}"
            )
        if group.length != int(np.prod(group.shape, dtype=np.int64)):
            raise LayoutError(f"group '{group.name}' length does not match its shape")
        cursor += group.length
    if cursor != size:
        raise LayoutError(f"groups cover {cursor} values but vector has {size}")


def _freeze(values: FloatArray) -> FloatArray:
    values.flags.writeable = False
    return values


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable flat float64 vector with an exact group partition."""

    values: FloatArray
    groups: Layout

    def __post_init__(self) -> None:
        array = np.array(self.values, dtype=np.float64, copy=True).ravel()
        _check_partition(self.groups, array.size)
        object.__setattr__(self, "values", _freeze(array))

    # Construction
    @classmethod
    def from_arrays(cls, named: Sequence[Tuple[str, npt.ArrayLike]]) -> "ParamVector":
        groups: List[ParamGroup] = []
        chunks: List[FloatArray] = []
        offset = 0
        for name, raw in named:
            array = np.asarray(raw, dtype=np.float64)
            groups.append(ParamGroup(name, offset, int(array.size), tuple(array.shape)))
            chunks.append(array.ravel())
            offset += int(array.size)
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, tuple(groups))

    def with_values(self, values: npt.ArrayLike) -> "ParamVector":
        """Return a vector with this layout and new *values*."""
        array = np.asarray(values, dtype=np.float64).ravel()
        if array.size != self.values.size:
            raise LayoutError(
                f"value count {array.size} does not match layout size {self.values.size}"
            )
        return ParamVector(array, self.groups)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.groups)

    # Layout
    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def group_names(self) -> Tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def compatible(self, other: "ParamVector") -> bool:
        return self.groups == other.groups

    def require_compatible(self, other: "ParamVector", what: str = "vector") -> None:
        if not self.compatible(other):
            raise LayoutError(f"{what} layout does not match")

    def group(self, name: str) -> FloatArray:
        """Return the values of group *name* reshaped to its tensor shape."""
        for g in self.groups:
            if g.name == name:
                return self.values[g.offset : g.offset + g.length].reshape(g.shape)
        raise LayoutError(f"unknown parameter group '{name}'")

    def unflatten(self) -> Dict[str, FloatArray]:
        return {
            g.name: self.values[g.offset : g.offset + g.length].reshape(g.shape)
            for g in self.groups
        }

    def iter_groups(self) -> Iterator[Tuple[ParamGroup, FloatArray]]:
        for g in self.groups:
            yield g, self.values[g.offset : g.offset + g.length]

    # Serialisation helpers
    def layout_json(self) -> List[List[Any]]:
        return [g.to_json() for g in self.groups]

    @staticmethod
    def layout_from_json(raw: Sequence[Sequence[Any]]) -> Layout:
        try:
            return tuple(ParamGroup.from_json(entry) for entry in raw)
        except (TypeError, ValueError) as exc:
            raise LayoutError(f"malformed group table: {exc}") from exc

    def layout_checksum(self) -> str:
        return layout_checksum(self.groups)

    def checksum(self) -> str:
        """SHA-256 over layout and raw little-endian values."""
        h = hashlib.sha256(self.layout_checksum().encode("ascii"))
        h.update(self.values.astype("<f8").tobytes())
        return h.hexdigest()

    def equals(self, other: "ParamVector") -> bool:
        """Bit-exact comparison of layout and values."""
        return self.compatible(other) and bool(
            np.array_equal(self.values.view(np.uint64), other.values.view(np.uint64))
        )


def layout_checksum(groups: Layout) -> str:
    text = json.dumps([g.to_json() for g in groups], separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
