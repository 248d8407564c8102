"""
First-order optimizers as pure state transitions.

``step`` never mutates its inputs: it returns a new :class:`OptimizerState`
and a new parameter vector. The second moment ``v`` is the squared-gradient
accumulator

    v ← β₂·v + (1 − β₂)·g²

that the Squisher recycles. ``g`` is always the mean-reduced batch gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np
import numpy.typing as npt
import structlog

from src.core.exceptions import AccumulatorUnavailableError, InputError, NumericError
from src.nn.params import ParamVector

__all__: list[str] = [
    "OptimizerKind",
    "OptimizerState",
    "init_state",
    "zeroed_state",
    "step",
    "accumulator",
]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"
    ADAMW = "adamw"

    @property
    def adaptive(self) -> bool:
        return self is not OptimizerKind.SGD


@dataclass(frozen=True)
class OptimizerState:
    """Moments, step count and hyperparameters of one optimizer.

    Attributes:
        kind: ``sgd`` keeps ``m`` and ``v`` at zero.
        t: Number of steps taken.
        m: First moment (β₁ EMA of gradients).
        v: Second moment (β₂ EMA of squared gradients).
        beta2: Decay of ``v``; Adam's default is 0.999.
        weight_decay: L2 coefficient (``sgd``/``adam``) or decoupled decay (``adamw``).
    """

    kind: OptimizerKind
    t: int
    m: ParamVector
    v: ParamVector
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", OptimizerKind(self.kind))
        if self.t < 0:
            raise InputError("step count must be non-negative")
        if self.lr < 0.0:
            raise InputError("learning rate must be non-negative")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise InputError(f"{name} must lie in [0, 1), got {value}")
        if self.eps <= 0.0:
            raise InputError("eps must be positive")
        if self.weight_decay < 0.0:
            raise InputError("weight_decay must be non-negative")
        self.m.require_compatible(self.v, "second moment")
        if np.any(self.v.values < 0.0):
            raise NumericError("second moment must be non-negative")

    def hyperparameters(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "t": self.t,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
        }


def init_state(
    kind: OptimizerKind | str,
    params: ParamVector,
    *,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptimizerState:
    """Fresh state with zero moments, laid out like *params*."""
    zeros = params.zeros_like()
    return OptimizerState(
        kind=OptimizerKind(kind),
        t=0,
        m=zeros,
        v=zeros,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
    )


def zeroed_state(params: ParamVector) -> OptimizerState:
    """Empty SGD state attached to merged or otherwise synthesised checkpoints."""
    return init_state(OptimizerKind.SGD, params, lr=0.0)


def step(
    state: OptimizerState,
    params: ParamVector,
    grad: ParamVector,
) -> Tuple[OptimizerState, ParamVector]:
    """Apply one update with the mean-loss batch gradient *grad*.

    Raises:
        LayoutError: if *params* or *grad* do not match the state layout.
        NumericError: if *grad* contains NaN or Inf (nothing is updated).
    """
    state.m.require_compatible(params, "parameter")
    state.m.require_compatible(grad, "gradient")
    if not np.all(np.isfinite(grad.values)):
        logger.warning("non_finite_gradient", t=state.t)
        raise NumericError("gradient contains NaN or Inf")

    t = state.t + 1
    theta = params.values
    g = grad.values

    if state.kind is OptimizerKind.SGD:
        direction = g + state.weight_decay * theta if state.weight_decay else g
        return replace(state, t=t), params.with_values(theta - state.lr * direction)

    if state.kind is OptimizerKind.ADAM and state.weight_decay:
        g = g + state.weight_decay * theta

    m = state.beta1 * state.m.values + (1.0 - state.beta1) * g
    v = state.beta2 * state.v.values + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)

    if state.kind is OptimizerKind.ADAMW and state.weight_decay:
        theta = theta * (1.0 - state.lr * state.weight_decay)
    updated = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    new_state = replace(state, t=t, m=state.m.with_values(m), v=state.v.with_values(v))
    return new_state, params.with_values(updated)


def accumulator(state: OptimizerState, *, bias_corrected: bool = True) -> FloatArray:
    """Return the squared-gradient accumulator ``v``.

    With *bias_corrected* (the default) the zero-initialisation bias is
    removed: ``v / (1 − β₂ᵗ)``.

    Raises:
        AccumulatorUnavailableError: for SGD states or before the first step.
    """
    if not state.kind.adaptive:
        raise AccumulatorUnavailableError("sgd keeps no squared-gradient accumulator")
    if state.t < 1:
        raise AccumulatorUnavailableError("accumulator is empty before the first step")
    v = np.array(state.v.values, copy=True)
    if bias_corrected:
        v = v / (1.0 - state.beta2**state.t)
    return v
