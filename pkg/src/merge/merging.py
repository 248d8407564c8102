"""
Model merging: Fisher-weighted averaging, gradient-matching merging against
a shared base, and the plain parameter average.

All Fishers are diagonal, so every "inverse" below is an elementwise
division. Coordinates with no Fisher mass fall back to uniform weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import structlog

from src.core.config import get_settings
from src.core.exceptions import InputError, LayoutError
from src.fisher.types import FisherDiagonal
from src.nn.params import ParamVector

__all__: list[str] = ["MergeInput", "fisher_merge", "ubgm_merge", "linear_merge"]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
ModelPair = Tuple[ParamVector, FisherDiagonal]


def _default_epsilon() -> float:
    return get_settings().merge_epsilon


@dataclass(frozen=True)
class MergeInput:
    """Models to merge with their Fishers, and an optional shared base.

    Construction enforces identical layouts and one scaling convention
    across every Fisher (the base's included).
    """

    models: Sequence[ModelPair]
    base: Optional[ModelPair] = None
    epsilon: float = field(default_factory=_default_epsilon)

    def __post_init__(self) -> None:
        object.__setattr__(self, "models", tuple(self.models))
        if not self.models:
            raise InputError("merge needs at least one model")
        if self.epsilon < 0.0:
            raise InputError("epsilon must be non-negative")
        pairs = list(self.models) + ([self.base] if self.base is not None else [])
        reference = pairs[0][0]
        scaling = pairs[0][1].scaling
        for params, fisher in pairs:
            reference.require_compatible(params, "merged model")
            reference.require_compatible(fisher.values, "Fisher")
            if fisher.scaling is not scaling:
                raise LayoutError(
                    f"cannot merge {fisher.scaling.value} with {scaling.value} Fishers"
                )

    @property
    def thetas(self) -> FloatArray:
        return np.stack([p.values for p, _ in self.models])

    @property
    def fishers(self) -> FloatArray:
        return np.stack([f.array for _, f in self.models])

    @property
    def template(self) -> ParamVector:
        return self.models[0][0]


def fisher_merge(inp: MergeInput) -> ParamVector:
    """θ̂ = Σ Fₘθₘ / (Σ Fₘ + ε), the unweighted mean where Σ Fₘ ≤ ε."""
    if len(inp.models) < 2:
        raise InputError("fisher_merge needs at least two models")
    thetas, fishers = inp.thetas, inp.fishers
    total = fishers.sum(axis=0)
    dead = total <= inp.epsilon
    weighted = (fishers * thetas).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        merged = np.where(dead, thetas.mean(axis=0), weighted / (total + inp.epsilon))
    logger.debug(
        "fisher_merge_computed", models=len(inp.models), dead_coordinates=int(dead.sum())
    )
    return inp.template.with_values(merged)


def ubgm_merge(inp: MergeInput) -> ParamVector:
    """θ̂ = θ₀ + (F₀ + Σ Fᵢ + ε)⁻¹ Σ (F₀ + Fᵢ)(θᵢ − θ₀).

    Where F₀ + Σ Fᵢ ≤ ε the result is θ₀ plus the mean task vector.
    """
    if inp.base is None:
        raise InputError("ubgm_merge needs a base model and its Fisher")
    theta0 = inp.base[0].values
    f0 = inp.base[1].array
    deltas = inp.thetas - theta0
    fishers = inp.fishers
    total = f0 + fishers.sum(axis=0)
    dead = total <= inp.epsilon
    numerator = ((f0 + fishers) * deltas).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        step = np.where(dead, deltas.mean(axis=0), numerator / (total + inp.epsilon))
    logger.debug("ubgm_merge_computed", models=len(inp.models), dead_coordinates=int(dead.sum()))
    return inp.template.with_values(theta0 + step)


def linear_merge(models: Sequence[ParamVector]) -> ParamVector:
    """Unweighted elementwise mean."""
    models = list(models)
    if len(models) < 2:
        raise InputError("linear_merge needs at least two models")
    for other in models[1:]:
        models[0].require_compatible(other, "merged model")
    stacked: List[FloatArray] = [m.values for m in models]
    return models[0].with_values(np.mean(stacked, axis=0))
