"""Fisher merging, gradient-matching merging and the linear baseline."""

from src.merge.artifacts import merged_checkpoint
from src.merge.merging import MergeInput, fisher_merge, linear_merge, ubgm_merge

__all__: list[str] = [
    "MergeInput",
    "fisher_merge",
    "linear_merge",
    "merged_checkpoint",
    "ubgm_merge",
]
