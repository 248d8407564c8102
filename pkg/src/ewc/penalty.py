"""
Elastic weight consolidation penalty.

    penalty(θ) = Σ_anchors (c/2) Σᵢ Fᵢ (θᵢ − θ̂ᵢ)²
    gradient   = Σ_anchors c · F ⊙ (θ − θ̂)

Anchors always hold their importance in ``mean_over_N`` form. The
coefficient ``c`` is λ, except for Squisher anchors under ``squisher_auto``
where it is λ·N; :func:`anchor_coefficient` is the only place that decides.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence, Tuple, Union

import numpy as np
import structlog

from src.core.exceptions import ContainerFormatError, InputError
from src.fisher.types import (
    FisherDiagonal,
    FisherKind,
    Scaling,
    load_fisher_with_extras,
    rescale,
    save_fisher,
)
from src.nn.params import ParamVector

__all__: list[str] = [
    "LambdaMode",
    "AnchorPolicy",
    "EwcConfig",
    "EwcAnchor",
    "anchor_coefficient",
    "ewc_penalty",
    "combine_anchors",
    "save_anchor",
    "load_anchor",
]

logger = structlog.get_logger(__name__)


class LambdaMode(str, Enum):
    FISHER = "fisher"
    SQUISHER_AUTO = "squisher_auto"


class AnchorPolicy(str, Enum):
    PER_TASK = "per_task"
    RUNNING_SUM = "running_sum"


@dataclass(frozen=True)
class EwcConfig:
    lam: float
    lambda_mode: LambdaMode = LambdaMode.SQUISHER_AUTO
    anchor_policy: AnchorPolicy = AnchorPolicy.PER_TASK

    def __post_init__(self) -> None:
        object.__setattr__(self, "lambda_mode", LambdaMode(self.lambda_mode))
        object.__setattr__(self, "anchor_policy", AnchorPolicy(self.anchor_policy))
        if not self.lam >= 0.0:
            raise InputError(f"lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class EwcAnchor:
    """Post-task parameters θ̂ and their importance, converted to ``mean_over_N`` on ingest."""

    theta_hat: ParamVector
    fisher: FisherDiagonal
    task_id: int

    def __post_init__(self) -> None:
        self.theta_hat.require_compatible(self.fisher.values, "anchor Fisher")
        object.__setattr__(self, "fisher", rescale(self.fisher, Scaling.MEAN_OVER_N))


def anchor_coefficient(anchor: EwcAnchor, cfg: EwcConfig) -> float:
    if cfg.lambda_mode is LambdaMode.SQUISHER_AUTO and anchor.fisher.kind is FisherKind.SQUISHER:
        return cfg.lam * anchor.fisher.n_data
    return cfg.lam


def ewc_penalty(
    params: ParamVector, anchors: Sequence[EwcAnchor], cfg: EwcConfig
) -> Tuple[float, ParamVector]:
    """Penalty value and its gradient at *params*; zero with no anchors."""
    value = 0.0
    grad = np.zeros(len(params))
    for anchor in anchors:
        params.require_compatible(anchor.theta_hat, "anchor")
        coefficient = anchor_coefficient(anchor, cfg)
        delta = params.values - anchor.theta_hat.values
        weighted = anchor.fisher.array * delta
        value += 0.5 * coefficient * float(np.dot(weighted, delta))
        grad += coefficient * weighted
    return value, params.with_values(grad)


def combine_anchors(current: EwcAnchor | None, new: EwcAnchor) -> EwcAnchor:
    """Running-sum policy: importances add up, θ̂ moves to the latest task.

    The combined anchor keeps the newest anchor's kind and N.
    """
    if current is None:
        return new
    new.theta_hat.require_compatible(current.theta_hat, "anchor")
    summed = new.fisher.values.with_values(current.fisher.array + new.fisher.array)
    fisher = FisherDiagonal(
        summed, new.fisher.kind, Scaling.MEAN_OVER_N, new.fisher.n_data, new.fisher.meta
    )
    return EwcAnchor(new.theta_hat, fisher, new.task_id)


def save_anchor(anchor: EwcAnchor, path: Union[str, Path]) -> Path:
    return save_fisher(
        anchor.fisher,
        path,
        extra_header={"task_id": anchor.task_id},
        extra_arrays=[("theta_hat", anchor.theta_hat.values)],
    )


def load_anchor(path: Union[str, Path]) -> EwcAnchor:
    fisher, extra, arrays = load_fisher_with_extras(path)
    if "theta_hat" not in arrays:
        raise ContainerFormatError("theta_hat", "anchor payload has no θ̂ array")
    if "task_id" not in extra:
        raise ContainerFormatError("task_id", "missing from anchor header")
    return EwcAnchor(arrays["theta_hat"], fisher, int(extra["task_id"]))
