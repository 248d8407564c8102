"""EWC penalty and the task-incremental training loop."""

from src.ewc.continual import (
    AccuracyMatrix,
    ContinualResult,
    ContinualSettings,
    ImportanceSource,
    Scenario,
    run_task_incremental,
    task_importance,
)
from src.ewc.penalty import (
    AnchorPolicy,
    EwcAnchor,
    EwcConfig,
    LambdaMode,
    anchor_coefficient,
    combine_anchors,
    ewc_penalty,
    load_anchor,
    save_anchor,
)

__all__: list[str] = [
    "AccuracyMatrix",
    "ContinualResult",
    "ContinualSettings",
    "ImportanceSource",
    "Scenario",
    "run_task_incremental",
    "task_importance",
    "AnchorPolicy",
    "EwcAnchor",
    "EwcConfig",
    "LambdaMode",
    "anchor_coefficient",
    "combine_anchors",
    "ewc_penalty",
    "load_anchor",
    "save_anchor",
]
