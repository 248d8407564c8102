"""
Task embeddings from Fisher diagonals and transferability ranking.

An embedding is the per-group mean of a Fisher diagonal. Two embeddings are
compared through their shares of the combined importance,
u = F_a/(F_a+F_b+ε) and v = F_b/(F_a+F_b+ε), by cosine distance 1 − cos(u, v).
Lower distance means more similar tasks; rankings are ascending.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from src.core.config import get_settings
from src.core.exceptions import InputError, LayoutError
from src.fisher.types import FisherDiagonal

__all__: list[str] = [
    "TaskEmbedding",
    "RankedSource",
    "Ranking",
    "embed_task",
    "task_distance",
    "rank_sources",
    "rank_by_size",
    "mean_reciprocal_rank",
    "RANKING_COLUMNS",
    "ranking_rows",
    "write_rankings_csv",
]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]

RANKING_COLUMNS: Tuple[str, ...] = ("target", "source", "distance", "rank", "method")


@dataclass(frozen=True, eq=False)
class TaskEmbedding:
    values: FloatArray
    group_names: Tuple[str, ...]
    source: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        names = tuple(self.group_names)
        if values.size != len(names):
            raise LayoutError(f"{values.size} values for {len(names)} groups")
        if np.any(values < 0.0) or not np.all(np.isfinite(values)):
            raise InputError("embedding values must be finite and non-negative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group_names", names)

    def to_json(self) -> Dict[str, Any]:
        return {
            "group_names": list(self.group_names),
            "values": self.values.tolist(),
            "source": dict(self.source),
        }

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "TaskEmbedding":
        return cls(
            np.asarray(raw["values"], dtype=np.float64),
            tuple(raw["group_names"]),
            dict(raw.get("source", {})),
        )

    def save(self, path: Union[str, Path]) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True), encoding="utf-8")
        return target


def embed_task(fisher: FisherDiagonal) -> TaskEmbedding:
    """Per-group arithmetic mean of the Fisher values."""
    groups = fisher.values.groups
    if not groups:
        raise InputError("Fisher has no parameter groups")
    means: List[float] = []
    for group, values in fisher.values.iter_groups():
        if group.length == 0:
            raise InputError(f"parameter group '{group.name}' is empty")
        means.append(float(values.mean()))
    source = {"kind": fisher.kind.value, "scaling": fisher.scaling.value, "n_data": fisher.n_data}
    return TaskEmbedding(np.asarray(means), tuple(g.name for g in groups), source)


def task_distance(a: TaskEmbedding, b: TaskEmbedding, epsilon: Optional[float] = None) -> float:
    """Cosine distance in [0, 2] between the two tasks' importance shares.

    Coordinates dead in both tasks give u = v = 0 and drop out.
    """
    if a.group_names != b.group_names:
        raise LayoutError("embeddings have different parameter groups")
    eps = get_settings().embed_epsilon if epsilon is None else epsilon
    total = a.values + b.values + eps
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(total > 0.0, a.values / total, 0.0)
        v = np.where(total > 0.0, b.values / total, 0.0)
    norm = float(np.linalg.norm(u) * np.linalg.norm(v))
    if norm == 0.0:
        raise InputError("task distance is undefined when an embedding has no mass")
    # accumulate symmetrically so d(a, b) == d(b, a) bit for bit
    cosine = float(np.sum(u * v)) / norm
    return float(min(2.0, max(0.0, 1.0 - cosine)))


@dataclass(frozen=True)
class RankedSource:
    name: str
    distance: float
    rank: int


@dataclass(frozen=True)
class Ranking:
    entries: Tuple[RankedSource, ...]
    gold: Optional[str] = None

    @property
    def order(self) -> List[str]:
        return [e.name for e in self.entries]

    @property
    def reciprocal_rank(self) -> Optional[float]:
        if self.gold is None:
            return None
        for entry in self.entries:
            if entry.name == self.gold:
                return 1.0 / entry.rank
        raise InputError(f"gold source '{self.gold}' is not among the sources")


def _ranked(scored: Sequence[Tuple[str, float]], gold: Optional[str]) -> Ranking:
    entries = tuple(
        RankedSource(name, distance, rank)
        for rank, (name, distance) in enumerate(scored, start=1)
    )
    if gold is not None and gold not in {e.name for e in entries}:
        raise InputError(f"gold source '{gold}' is not among the sources")
    return Ranking(entries, gold)


def rank_sources(
    target: TaskEmbedding,
    sources: Mapping[str, TaskEmbedding],
    gold: Optional[str] = None,
    epsilon: Optional[float] = None,
) -> Ranking:
    """Sources by ascending distance to *target*, ties broken by name."""
    if not sources:
        raise InputError("ranking needs at least one source")
    scored = sorted(
        ((name, task_distance(target, emb, epsilon)) for name, emb in sources.items()),
        key=lambda item: (item[1], item[0]),
    )
    logger.debug("sources_ranked", sources=len(scored), gold=gold)
    return _ranked(scored, gold)


def rank_by_size(sizes: Mapping[str, int], gold: Optional[str] = None) -> Ranking:
    """Baseline: largest source dataset first, ties broken by name.

    The reported ``distance`` is the negated size so the column stays ascending.
    """
    if not sizes:
        raise InputError("ranking needs at least one source")
    scored = sorted(((name, -float(n)) for name, n in sizes.items()), key=lambda i: (i[1], i[0]))
    return _ranked(scored, gold)


def mean_reciprocal_rank(rankings: Sequence[Ranking]) -> float:
    ranks = [r.reciprocal_rank for r in rankings]
    if not ranks or any(r is None for r in ranks):
        raise InputError("MRR needs at least one ranking, each with a gold source")
    return float(np.mean([r for r in ranks if r is not None]))


def ranking_rows(target: str, ranking: Ranking, method: str) -> List[Dict[str, Any]]:
    return [
        {"target": target, "source": e.name, "distance": e.distance, "rank": e.rank, "method": method}
        for e in ranking.entries
    ]


def write_rankings_csv(path: Union[str, Path], rows: Sequence[Mapping[str, Any]]) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=list(RANKING_COLUMNS)).to_csv(target, index=False)
    return target
