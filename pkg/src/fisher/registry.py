"""
Estimator Registry

Maps the estimator names used in experiment configs to functions that turn
an :class:`EstimatorRequest` into a :class:`FisherDiagonal`. The ``fisher``,
``merge``, ``prune``, ``embed`` and ``ewc`` commands all pick their
estimator from here.

The ``squisher`` entries never look at ``request.data``; callers may pass
``None`` there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Dict, Final, Optional, Tuple

import numpy as np

from src.core.exceptions import InputError
from src.core.rng import derive_rng
from src.fisher.estimators import (
    batched_joint_empirical_fisher,
    empirical_fisher,
    joint_empirical_fisher,
    squisher,
    standard_fisher_mc,
)
from src.fisher.types import FisherDiagonal, Scaling
from src.nn.mlp import HeadSlice
from src.optim.checkpoint import Checkpoint

__all__: list[str] = ["EstimatorRequest", "ESTIMATORS", "estimate", "needs_data"]


@dataclass(frozen=True)
class EstimatorRequest:
    """Everything an estimator may need; each one reads only its own fields."""

    checkpoint: Checkpoint
    data: Optional[Tuple[Any, Any]] = None
    head_slice: HeadSlice = None
    scaling: Scaling = Scaling.SUM_OVER_N
    mc_samples: int = 1
    seed: int = 0
    batch_size: Optional[int] = None


def _data(request: EstimatorRequest) -> Tuple[Any, Any]:
    if request.data is None:
        raise InputError("this estimator needs the training data")
    return request.data


def _empirical(request: EstimatorRequest) -> FisherDiagonal:
    ckpt = request.checkpoint
    return empirical_fisher(
        ckpt.mlp_spec, ckpt.params, _data(request), request.scaling, head_slice=request.head_slice
    )


def _standard_mc(request: EstimatorRequest) -> FisherDiagonal:
    ckpt = request.checkpoint
    xs = np.asarray(_data(request)[0])
    rng = derive_rng(request.seed, "fisher", "standard_mc")
    return standard_fisher_mc(
        ckpt.mlp_spec,
        ckpt.params,
        xs,
        request.mc_samples,
        rng,
        request.scaling,
        head_slice=request.head_slice,
    )


def _joint(request: EstimatorRequest) -> FisherDiagonal:
    ckpt = request.checkpoint
    return joint_empirical_fisher(
        ckpt.mlp_spec, ckpt.params, _data(request), request.scaling, head_slice=request.head_slice
    )


def _joint_batched(request: EstimatorRequest) -> FisherDiagonal:
    ckpt = request.checkpoint
    batch = request.batch_size or ckpt.provenance.batch_size
    return batched_joint_empirical_fisher(
        ckpt.mlp_spec, ckpt.params, _data(request), batch, head_slice=request.head_slice
    )


def _squisher(request: EstimatorRequest) -> FisherDiagonal:
    return squisher(request.checkpoint, bias_corrected=True)


def _squisher_raw(request: EstimatorRequest) -> FisherDiagonal:
    return squisher(request.checkpoint, bias_corrected=False)


# Dispatch table – config name to estimator.
ESTIMATORS: Final[Dict[str, Callable[[EstimatorRequest], FisherDiagonal]]] = {
    "empirical": _empirical,
    "standard_mc": _standard_mc,
    "joint": _joint,
    "joint_batched": _joint_batched,
    "squisher": _squisher,
    "squisher_raw": _squisher_raw,
}

_DATA_FREE: Final[frozenset[str]] = frozenset({"squisher", "squisher_raw"})


def needs_data(name: str) -> bool:
    """Whether estimator *name* reads training data."""
    return name not in _DATA_FREE


def estimate(name: str, request: EstimatorRequest) -> FisherDiagonal:
    try:
        fn = ESTIMATORS[name]
    except KeyError as exc:
        raise InputError(f"unknown estimator '{name}'; known: {sorted(ESTIMATORS)}") from exc
    return fn(request)
