from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from src.core.exceptions import InputError, LayoutError
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
from src.fisher.types import FisherDiagonal, FisherKind, Scaling
from src.nn.params import ParamVector

pytestmark = pytest.mark.unit


def _emb(*values: float) -> TaskEmbedding:
    return TaskEmbedding(np.asarray(values), tuple(f"g{i}" for i in range(len(values))))


def test_embedding_is_the_per_group_mean() -> None:
    vec = ParamVector.from_arrays([("w", [1.0, 3.0]), ("b", [5.0])])
    emb = embed_task(FisherDiagonal(vec, FisherKind.SQUISHER, Scaling.SUM_OVER_N, 12))
    np.testing.assert_array_equal(emb.values, [2.0, 5.0])
    assert emb.group_names == ("w", "b")
    assert emb.source == {"kind": "squisher", "scaling": "sum_over_N", "n_data": 12}


def test_empty_groups_are_rejected() -> None:
    vec = ParamVector.from_arrays([("w", [1.0]), ("empty", np.zeros(0))])
    with pytest.raises(InputError):
        embed_task(FisherDiagonal(vec, FisherKind.EMPIRICAL, Scaling.SUM_OVER_N, 1))


_mass = arrays(np.float64, 3, elements=st.floats(0.01, 100.0))


@settings(max_examples=40, deadline=None)
@given(_mass, _mass)
def test_distance_is_symmetric_and_bounded(a: np.ndarray, b: np.ndarray) -> None:
    ea, eb = _emb(*a), _emb(*b)
    d = task_distance(ea, eb)
    assert d == task_distance(eb, ea)
    assert 0.0 <= d <= 2.0


@settings(max_examples=40, deadline=None)
@given(_mass, _mass, st.sampled_from([1e-3, 1e3]))
def test_joint_rescale_leaves_distance_unchanged(a: np.ndarray, b: np.ndarray, c: float) -> None:
    base = task_distance(_emb(*a), _emb(*b), epsilon=0.0)
    scaled = task_distance(_emb(*(a * c)), _emb(*(b * c)), epsilon=0.0)
    assert scaled == pytest.approx(base, rel=1e-12, abs=1e-12)


def test_self_distance_is_zero_and_disjoint_mass_is_one() -> None:
    assert task_distance(_emb(1.0, 2.0, 3.0), _emb(1.0, 2.0, 3.0)) == pytest.approx(0.0, abs=1e-12)
    assert task_distance(_emb(1.0, 0.0), _emb(0.0, 1.0), epsilon=0.0) == pytest.approx(1.0)


def test_coordinates_dead_in_both_tasks_drop_out() -> None:
    assert task_distance(_emb(1.0, 0.0), _emb(1.0, 0.0), epsilon=0.0) == pytest.approx(0.0)


def test_distance_errors() -> None:
    with pytest.raises(LayoutError):
        task_distance(_emb(1.0), _emb(1.0, 2.0))
    with pytest.raises(InputError):
        task_distance(_emb(0.0, 0.0), _emb(1.0, 1.0), epsilon=0.0)
    with pytest.raises(InputError):
        _emb(-1.0)


def test_ranking_orders_by_distance_and_reports_gold_rank() -> None:
    target = _emb(1.0, 1.0)
    sources = {"far": _emb(10.0, 0.1), "same": _emb(1.0, 1.0), "near": _emb(1.2, 1.0)}
    ranking = rank_sources(target, sources, gold="far")
    assert ranking.order == ["same", "near", "far"]
    assert ranking.reciprocal_rank == pytest.approx(1 / 3)
    assert [e.rank for e in ranking.entries] == [1, 2, 3]


def test_distance_ties_break_by_name() -> None:
    ranking = rank_sources(_emb(1.0, 1.0), {"b": _emb(2.0, 2.0), "a": _emb(2.0, 2.0)})
    assert ranking.order == ["a", "b"]
    assert ranking.reciprocal_rank is None


def test_gold_at_rank_four_scores_a_quarter() -> None:
    entries = tuple(RankedSource(n, float(i), i) for i, n in enumerate("abcd", start=1))
    assert Ranking(entries, gold="d").reciprocal_rank == 0.25


def test_size_baseline_ranks_largest_first() -> None:
    ranking = rank_by_size({"small": 10, "big": 500, "mid": 100}, gold="mid")
    assert ranking.order == ["big", "mid", "small"]
    assert ranking.reciprocal_rank == 0.5


def test_mean_reciprocal_rank() -> None:
    a = rank_by_size({"x": 2, "y": 1}, gold="x")
    b = rank_by_size({"x": 2, "y": 1}, gold="y")
    assert mean_reciprocal_rank([a, b]) == pytest.approx(0.75)
    with pytest.raises(InputError):
        mean_reciprocal_rank([rank_by_size({"x": 1})])
    with pytest.raises(InputError):
        rank_by_size({"x": 1}, gold="z")
    with pytest.raises(InputError):
        rank_sources(_emb(1.0), {})


def test_embedding_json_and_rankings_csv(tmp_path: Path) -> None:
    emb = _emb(0.5, 2.0)
    loaded = TaskEmbedding.from_json(emb.to_json())
    np.testing.assert_array_equal(loaded.values, emb.values)
    assert emb.save(tmp_path / "e" / "emb.json").exists()

    ranking = rank_by_size({"x": 3, "y": 1}, gold="x")
    path = write_rankings_csv(tmp_path / "rankings.csv", ranking_rows("t", ranking, "baseline"))
    frame = pd.read_csv(path)
    assert tuple(frame.columns) == RANKING_COLUMNS
    assert frame["source"].tolist() == ["x", "y"]
    assert frame["method"].unique().tolist() == ["baseline"]
