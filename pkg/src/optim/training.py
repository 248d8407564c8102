"""
Mini-batch training loop shared by every experiment.

Each epoch visits a fresh permutation of the data in consecutive batches of
``batch_size``; a trailing partial batch is dropped (and counted) so every
step sees exactly B examples.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Tuple

import numpy as np
import structlog

from src.core.exceptions import InputError
from src.nn.mlp import HeadSlice, MlpSpec, batch_loss_and_grad
from src.nn.params import ParamVector
from src.optim.state import OptimizerKind, OptimizerState, init_state, step

__all__: list[str] = [
    "TrainSettings",
    "TrainResult",
    "Regularizer",
    "GradientTransform",
    "new_state",
    "train",
]

logger = structlog.get_logger(__name__)

Regularizer = Callable[[ParamVector], Tuple[float, ParamVector]]
GradientTransform = Callable[[ParamVector], ParamVector]
Evaluator = Callable[[ParamVector], float]


@dataclass(frozen=True)
class TrainSettings:
    optimizer: OptimizerKind = OptimizerKind.ADAM
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be positive and epochs non-negative")


def new_state(settings: TrainSettings, params: ParamVector) -> OptimizerState:
    return init_state(
        settings.optimizer,
        params,
        lr=settings.lr,
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.eps,
        weight_decay=settings.weight_decay,
    )


@dataclass
class TrainResult:
    """Final parameters and state, plus the best epoch when an evaluator was given."""

    params: ParamVector
    state: OptimizerState
    dropped_partial_batches: int = 0
    losses: List[float] = field(default_factory=list)
    best_params: Optional[ParamVector] = None
    best_state: Optional[OptimizerState] = None
    best_score: Optional[float] = None
    best_epoch: Optional[int] = None


def train(
    spec: MlpSpec,
    params: ParamVector,
    state: OptimizerState,
    data: Tuple[Any, Any],
    settings: TrainSettings,
    rng: np.random.Generator,
    *,
    head_slice: HeadSlice = None,
    regularizer: Optional[Regularizer] = None,
    transform_grad: Optional[GradientTransform] = None,
    evaluate: Optional[Evaluator] = None,
) -> TrainResult:
    """Run ``settings.epochs`` epochs of mini-batch training from *params* and *state*.

    *regularizer* adds a penalty value and gradient to every step. The
    optimizer sees the sum, so Adam's squared-gradient accumulator carries
    the penalty gradient as well as the data gradient.
    *transform_grad* rewrites the summed gradient before the optimizer sees it
    (used to mask updates). With *evaluate*, the parameters and state after
    the epoch with the highest score are kept as the best snapshot.
    """
    xs = np.asarray(data[0], dtype=np.float64)
    ys = np.asarray(data[1])
    n = xs.shape[0]
    if n == 0:
        raise InputError("training needs at least one example")
    if settings.batch_size > n:
        raise InputError(f"batch_size {settings.batch_size} exceeds dataset size {n}")
    num_batches = n // settings.batch_size
    dropped = int(n % settings.batch_size != 0)

    result = TrainResult(params=params, state=state)
    started = time.perf_counter()
    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b in range(num_batches):
            idx = order[b * settings.batch_size : (b + 1) * settings.batch_size]
            loss, grad = batch_loss_and_grad(spec, params, xs[idx], ys[idx], head_slice)
            if regularizer is not None:
                penalty, penalty_grad = regularizer(params)
                loss += penalty
                grad = grad.with_values(grad.values + penalty_grad.values)
            if transform_grad is not None:
                grad = transform_grad(grad)
            state, params = step(state, params, grad)
            epoch_loss += loss
        result.losses.append(epoch_loss / num_batches)
        result.dropped_partial_batches += dropped

        if evaluate is not None:
            score = evaluate(params)
            if result.best_score is None or score > result.best_score:
                result.best_score = score
                result.best_params, result.best_state = params, state
                result.best_epoch = epoch

    result.params, result.state = params, state
    logger.debug(
        "training_finished",
        epochs=settings.epochs,
        steps=state.t,
        final_loss=result.losses[-1] if result.losses else None,
        duration_ms=round((time.perf_counter() - started) * 1000.0, 2),
    )
    return result
