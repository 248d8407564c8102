"""Fisher pruning, FISH masks and random baselines."""

from src.sparsify.masks import (
    Mask,
    PruningStatistics,
    apply_fish_reset,
    apply_prune,
    fraction_to_k,
    mask_gradient,
    pruning_stats,
    random_mask,
    top_k_mask,
)

__all__: list[str] = [
    "Mask",
    "PruningStatistics",
    "apply_fish_reset",
    "apply_prune",
    "fraction_to_k",
    "mask_gradient",
    "pruning_stats",
    "random_mask",
    "top_k_mask",
]
