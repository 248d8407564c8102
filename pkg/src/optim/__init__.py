from __future__ import annotations

from .checkpoint import (
    CHECKPOINT_FORMAT_VERSION,
    Checkpoint,
    Provenance,
    load_checkpoint,
    save_checkpoint,
)
from .state import (
    OptimizerKind,
    OptimizerState,
    accumulator,
    init_state,
    step,
    zeroed_state,
)
from .training import TrainResult, TrainSettings, new_state, train

__all__: list[str] = [
    "CHECKPOINT_FORMAT_VERSION",
    "Checkpoint",
    "OptimizerKind",
    "OptimizerState",
    "Provenance",
    "TrainResult",
    "TrainSettings",
    "accumulator",
    "init_state",
    "load_checkpoint",
    "new_state",
    "save_checkpoint",
    "step",
    "train",
    "zeroed_state",
]
