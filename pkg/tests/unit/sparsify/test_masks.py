from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.core.exceptions import InputError, LayoutError
from src.core.rng import derive_rng
from src.fisher.types import FisherDiagonal, FisherKind, Scaling
from src.nn.params import ParamVector
from src.sparsify.masks import (
    Mask,
    apply_fish_reset,
    apply_prune,
    fraction_to_k,
    mask_gradient,
    pruning_stats,
    random_mask,
    top_k_mask,
)

pytestmark = pytest.mark.unit


def _vec(values) -> ParamVector:
    return ParamVector.from_arrays([("a", np.asarray(values[:1], dtype=float)), ("b", np.asarray(values[1:], dtype=float))])


def _fisher(values) -> FisherDiagonal:
    return FisherDiagonal(_vec(values), FisherKind.EMPIRICAL, Scaling.SUM_OVER_N, 4)


def test_pruning_stats_half_theta_squared_times_fisher() -> None:
    stats = pruning_stats(_vec([2.0, 1.0, 3.0]), _fisher([1.0, 4.0, 0.0]))
    np.testing.assert_array_equal(stats.rho.values, [2.0, 2.0, 0.0])
    with pytest.raises(LayoutError):
        pruning_stats(ParamVector.from_arrays([("x", np.ones(3))]), _fisher([1.0, 1.0, 1.0]))


def test_ties_go_to_the_lower_index() -> None:
    mask = top_k_mask(_vec([2.0, 2.0, 0.0]), 1)
    np.testing.assert_array_equal(mask.keep, [True, False, False])
    np.testing.assert_array_equal(top_k_mask(_vec([0.0, 0.0, 0.0]), 2).keep, [True, True, False])


def test_top_k_boundaries() -> None:
    scores = _vec([0.5, 3.0, 1.0, 2.0])
    assert top_k_mask(scores, 0).k == 0
    assert top_k_mask(scores, 4).k == 4
    np.testing.assert_array_equal(top_k_mask(scores, 2).keep, [False, True, False, True])
    with pytest.raises(InputError):
        top_k_mask(scores, 5)
    with pytest.raises(InputError):
        top_k_mask(scores, -1)


@given(
    st.lists(st.integers(0, 50), min_size=2, max_size=12),
    st.data(),
    st.sampled_from([1e-3, 1e3]),
)
def test_top_k_is_scale_invariant(raw: list[int], data: st.DataObject, c: float) -> None:
    scores = _vec([float(v) for v in raw])
    k = data.draw(st.integers(0, len(raw)))
    assert top_k_mask(scores, k) == top_k_mask(scores.with_values(scores.values * c), k)


def test_random_mask_is_seeded_and_sized() -> None:
    groups = _vec([0.0] * 10).groups
    a = random_mask(groups, 4, derive_rng(1, "mask"))
    b = random_mask(groups, 4, derive_rng(1, "mask"))
    assert a == b and a.k == 4
    assert a != random_mask(groups, 4, derive_rng(2, "mask"))
    with pytest.raises(InputError):
        random_mask(groups, 11, derive_rng(1, "mask"))


def test_random_mask_includes_every_index_equally_often() -> None:
    groups = _vec([0.0] * 20).groups
    rng = derive_rng(4, "tests", "mask-frequency")
    draws = 4000
    counts = sum(random_mask(groups, 5, rng).keep.astype(int) for _ in range(draws))

    rate = 5 / 20
    sigma = np.sqrt(rate * (1.0 - rate) / draws)
    assert np.all(np.abs(counts / draws - rate) <= 4.0 * sigma)


def test_apply_prune_and_fish_reset() -> None:
    mask = Mask(np.array([True, False, True]), _vec([0.0] * 3).groups)
    np.testing.assert_array_equal(apply_prune(_vec([1.0, 2.0, 3.0]), mask).values, [1.0, 0.0, 3.0])
    reset = apply_fish_reset(_vec([1.0, 2.0, 3.0]), _vec([9.0, 8.0, 7.0]), mask)
    np.testing.assert_array_equal(reset.values, [1.0, 8.0, 3.0])
    np.testing.assert_array_equal(mask_gradient(_vec([5.0, 5.0, 5.0]), mask).values, [5.0, 0.0, 5.0])


def test_full_mask_reset_returns_finetuned_and_empty_mask_returns_pretrained() -> None:
    groups = _vec([0.0] * 3).groups
    finetuned, pretrained = _vec([1.0, 2.0, 3.0]), _vec([9.0, 8.0, 7.0])
    assert apply_fish_reset(finetuned, pretrained, Mask(np.ones(3, bool), groups)).equals(finetuned)
    assert apply_fish_reset(finetuned, pretrained, Mask(np.zeros(3, bool), groups)).equals(pretrained)


def test_mask_layout_checks() -> None:
    groups = _vec([0.0] * 3).groups
    with pytest.raises(LayoutError):
        Mask(np.ones(4, bool), groups)
    other = ParamVector.from_arrays([("x", np.zeros(3))])
    with pytest.raises(LayoutError):
        apply_prune(other, Mask(np.ones(3, bool), groups))


def test_mask_json_round_trip() -> None:
    groups = _vec([0.0] * 7).groups
    mask = Mask(np.array([True, True, False, True, False, False, False]), groups)
    raw = mask.to_json()
    assert raw["runs"] == [2, 1, 1, 3]
    assert raw["first"] is True and raw["k"] == 3
    assert Mask.from_json(raw, groups) == mask

    with pytest.raises(LayoutError):
        Mask.from_json(raw, ParamVector.from_arrays([("x", np.zeros(7))]).groups)
    with pytest.raises(InputError):
        Mask.from_json({**raw, "k": 4}, groups)


@pytest.mark.parametrize(
    "n,fraction,expected",
    [(10, 0.0, 10), (10, 0.9, 1), (10, 1.0, 0), (10, 0.25, 7), (3, 0.5, 1), (1000, 0.999, 1)],
)
def test_fraction_to_k(n: int, fraction: float, expected: int) -> None:
    assert fraction_to_k(n, fraction) == expected


def test_fraction_to_k_rejects_out_of_range() -> None:
    with pytest.raises(InputError):
        fraction_to_k(10, 1.5)
