"""
Fisher pruning, FISH masks and random baselines.

A :class:`Mask` is a boolean vector in a parameter layout. Selection is
always "the k largest scores", ties going to the lower parameter index, so
the same scores give the same mask on every run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
import numpy.typing as npt
import structlog

from src.core.exceptions import InputError, LayoutError
from src.fisher.types import FisherDiagonal
from src.nn.params import Layout, ParamVector, layout_checksum

__all__: list[str] = [
    "PruningStatistics",
    "Mask",
    "pruning_stats",
    "top_k_mask",
    "random_mask",
    "apply_prune",
    "apply_fish_reset",
    "mask_gradient",
    "fraction_to_k",
]

logger = structlog.get_logger(__name__)

BoolArray = npt.NDArray[np.bool_]
FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class PruningStatistics:
    """ρᵢ = θᵢ²Fᵢ/2 in the parameter layout."""

    rho: ParamVector

    def __post_init__(self) -> None:
        if np.any(self.rho.values < 0.0):
            raise InputError("pruning statistics must be non-negative")


@dataclass(frozen=True, eq=False)
class Mask:
    keep: BoolArray
    groups: Layout

    def __post_init__(self) -> None:
        keep = np.array(self.keep, dtype=bool, copy=True).ravel()
        size = sum(g.length for g in self.groups)
        if keep.size != size:
            raise LayoutError(f"mask has {keep.size} bits, layout has {size} parameters")
        keep.flags.writeable = False
        object.__setattr__(self, "keep", keep)

    @property
    def k(self) -> int:
        return int(self.keep.sum())

    def __len__(self) -> int:
        return int(self.keep.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.groups == other.groups and bool(np.array_equal(self.keep, other.keep))

    def __hash__(self) -> int:
        return hash((self.groups, self.keep.tobytes()))

    def require_compatible(self, params: ParamVector) -> None:
        if params.groups != self.groups:
            raise LayoutError("mask layout does not match parameters")

    def to_json(self) -> Dict[str, Any]:
        """Run-length encoding: the first bit, then the lengths of alternating runs."""
        runs: List[int] = []
        if self.keep.size:
            edges = np.flatnonzero(np.diff(self.keep.astype(np.int8))) + 1
            bounds = np.concatenate(([0], edges, [self.keep.size]))
            runs = np.diff(bounds).astype(int).tolist()
        return {
            "length": len(self),
            "k": self.k,
            "first": bool(self.keep[0]) if self.keep.size else False,
            "runs": runs,
            "layout_checksum": layout_checksum(self.groups),
        }

    @classmethod
    def from_json(cls, raw: Dict[str, Any], groups: Layout) -> "Mask":
        if raw.get("layout_checksum") != layout_checksum(groups):
            raise LayoutError("mask was built for a different parameter layout")
        bits: List[bool] = []
        value = bool(raw["first"])
        for run in raw["runs"]:
            bits.extend([value] * int(run))
            value = not value
        mask = cls(np.asarray(bits, dtype=bool), groups)
        if len(mask) != int(raw["length"]) or mask.k != int(raw["k"]):
            raise InputError("mask JSON is inconsistent with its run lengths")
        return mask


def pruning_stats(params: ParamVector, fisher: FisherDiagonal) -> PruningStatistics:
    params.require_compatible(fisher.values, "Fisher")
    theta = params.values
    return PruningStatistics(params.with_values(theta * theta * fisher.array / 2.0))


def _check_k(n: int, k: int) -> None:
    if not 0 <= k <= n:
        raise InputError(f"k must lie in [0, {n}], got {k}")


def top_k_mask(scores: ParamVector, k: int) -> Mask:
    """Keep the *k* largest scores; equal scores go to the lower index."""
    values = scores.values
    _check_k(values.size, k)
    # stable sort on the negated scores keeps ascending index among ties
    order = np.argsort(-values, kind="stable")
    keep = np.zeros(values.size, dtype=bool)
    keep[order[:k]] = True
    logger.debug("top_k_mask_built", k=k, num_params=int(values.size))
    return Mask(keep, scores.groups)


def random_mask(groups: Layout, k: int, rng: np.random.Generator) -> Mask:
    """Uniformly random k-subset of the parameters."""
    n = sum(g.length for g in groups)
    _check_k(n, k)
    keep = np.zeros(n, dtype=bool)
    keep[rng.choice(n, size=k, replace=False)] = True
    return Mask(keep, groups)


def apply_prune(params: ParamVector, mask: Mask) -> ParamVector:
    """Zero every parameter outside *mask*."""
    mask.require_compatible(params)
    return params.with_values(np.where(mask.keep, params.values, 0.0))


def apply_fish_reset(finetuned: ParamVector, pretrained: ParamVector, mask: Mask) -> ParamVector:
    """Keep fine-tuned values inside *mask*, pretrained values elsewhere."""
    finetuned.require_compatible(pretrained, "pretrained model")
    mask.require_compatible(finetuned)
    return finetuned.with_values(np.where(mask.keep, finetuned.values, pretrained.values))


def mask_gradient(grad: ParamVector, mask: Mask) -> ParamVector:
    """Zero gradient entries outside *mask*, for sparse fine-tuning."""
    mask.require_compatible(grad)
    return grad.with_values(np.where(mask.keep, grad.values, 0.0))


def fraction_to_k(num_params: int, prune_fraction: float) -> int:
    """Number of parameters kept when pruning *prune_fraction*; rounds toward fewer kept."""
    if not 0.0 <= prune_fraction <= 1.0:
        raise InputError("prune_fraction must lie in [0, 1]")
    # rounding first absorbs float error such as (1 - 0.9) * 10 = 0.999...
    return int(math.floor(round((1.0 - prune_fraction) * num_params, 9)))
