"""Task embeddings from Fisher diagonals and transferability ranking."""

from src.embed.tasks import (
    RANKING_COLUMNS,
    RankedSource,
    Ranking,
    TaskEmbedding,
    embed_task,
    mean_reciprocal_rank,
    rank_by_size,
    rank_sources,
    ranking_rows,
    task_distance,
    write_rankings_csv,
)

__all__: list[str] = [
    "RANKING_COLUMNS",
    "RankedSource",
    "Ranking",
    "TaskEmbedding",
    "embed_task",
    "mean_reciprocal_rank",
    "rank_by_size",
    "rank_sources",
    "ranking_rows",
    "task_distance",
    "write_rankings_csv",
]
