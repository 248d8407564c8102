from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.exceptions import InputError, LayoutError, NumericError
from src.core.rng import derive_rng
from src.nn.mlp import (
    Activation,
    Head,
    LabelSource,
    MlpSpec,
    accuracy,
    batch_loss_and_grad,
    forward,
    init_params,
    loss_and_grad,
    per_example_grads,
    predict,
    predictive_probs,
    sample_label,
)
from src.nn.params import ParamVector
from tests.helpers import finite_difference

pytestmark = pytest.mark.unit


def _batch(n: int = 6, dims: int = 4, classes: int = 3, seed: int = 1):
    rng = derive_rng(seed, "tests", "batch")
    return rng.standard_normal((n, dims)), rng.integers(0, classes, size=n)


def test_layout_names_and_shapes() -> None:
    spec = MlpSpec((4, 8, 3))
    names = [g.name for g in spec.layout()]
    assert names == ["layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"]
    assert spec.layout()[0].shape == (8, 4)
    assert spec.num_params == 4 * 8 + 8 + 8 * 3 + 3
    assert MlpSpec.from_json(spec.to_json()) == spec


@pytest.mark.parametrize("sizes", [(4,), (4, 0, 2)])
def test_invalid_architectures(sizes) -> None:
    with pytest.raises(InputError):
        MlpSpec(sizes)


def test_forward_identity_weights_return_input() -> None:
    spec = MlpSpec((2, 2))
    params = ParamVector.from_arrays([("layer0.weight", np.eye(2)), ("layer0.bias", np.zeros(2))])
    np.testing.assert_array_equal(forward(spec, params, [0.5, -1.5]), [0.5, -1.5])
    assert forward(spec, params, np.ones((3, 2))).shape == (3, 2)


def test_forward_with_zero_params_gives_zero_output(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    out = forward(tiny_spec, tiny_params.zeros_like(), np.ones((5, 4)))
    np.testing.assert_array_equal(out, np.zeros((5, 3)))


def test_forward_rejects_bad_shapes_and_layouts(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    with pytest.raises(LayoutError):
        forward(tiny_spec, tiny_params, np.ones((2, 5)))
    with pytest.raises(LayoutError):
        forward(MlpSpec((4, 3)), tiny_params, np.ones(4))
    with pytest.raises(NumericError):
        forward(tiny_spec, tiny_params, [np.nan, 0, 0, 0])


def test_uniform_logits_give_log_num_classes(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    x, y = _batch()
    loss, _ = batch_loss_and_grad(tiny_spec, tiny_params.zeros_like(), x, y)
    assert loss == pytest.approx(math.log(3), rel=1e-12)


def test_mse_loss_has_half_factor() -> None:
    spec = MlpSpec((2, 2), head=Head.MSE)
    params = ParamVector.from_arrays([("layer0.weight", np.eye(2)), ("layer0.bias", np.zeros(2))])
    loss, _ = loss_and_grad(spec, params, [1.0, 2.0], [0.0, 0.0])
    assert loss == pytest.approx(2.5)


@pytest.mark.parametrize("head", [Head.SOFTMAX_XENT, Head.MSE])
def test_gradient_matches_finite_differences(head: Head) -> None:
    spec = MlpSpec((4, 8, 3), Activation.TANH, head)
    params = init_params(spec, derive_rng(7, "tests", "fd"))
    x, labels = _batch()
    y = labels if head is Head.SOFTMAX_XENT else derive_rng(2, "t").standard_normal((6, 3))

    _, grad = batch_loss_and_grad(spec, params, x, y)

    def loss_at(values: np.ndarray) -> float:
        return batch_loss_and_grad(spec, params.with_values(values), x, y)[0]

    numeric = finite_difference(loss_at, params.values.copy(), h=1e-5)
    np.testing.assert_allclose(grad.values, numeric, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("seed", range(50))
def test_gradient_matches_finite_differences_on_random_networks(seed: int) -> None:
    rng = derive_rng(seed, "tests", "fd-random")
    dims, classes = int(rng.integers(1, 5)), int(rng.integers(2, 5))
    hidden = tuple(int(w) for w in rng.integers(1, 6, size=int(rng.integers(0, 3))))
    head = Head.SOFTMAX_XENT if seed % 2 == 0 else Head.MSE
    spec = MlpSpec((dims, *hidden, classes), Activation.TANH, head)
    params = init_params(spec, rng)
    n = int(rng.integers(1, 5))
    x = rng.standard_normal((n, dims))
    y = rng.integers(0, classes, size=n) if head is Head.SOFTMAX_XENT else rng.standard_normal((n, classes))

    _, grad = batch_loss_and_grad(spec, params, x, y)

    def loss_at(values: np.ndarray) -> float:
        return batch_loss_and_grad(spec, params.with_values(values), x, y)[0]

    numeric = finite_difference(loss_at, params.values.copy(), h=1e-5)
    np.testing.assert_allclose(grad.values, numeric, rtol=1e-6, atol=1e-9)


def test_head_slice_limits_gradient_to_slice() -> None:
    spec = MlpSpec((4, 6), Activation.TANH)
    params = init_params(spec, derive_rng(1, "slice"))
    x, _ = _batch(dims=4)
    y = np.zeros(6, dtype=int)
    _, grad = batch_loss_and_grad(spec, params, x, y, head_slice=(2, 4))
    w = grad.group("layer0.weight")
    assert np.all(w[:2] == 0.0) and np.all(w[4:] == 0.0)
    assert np.any(w[2:4] != 0.0)
    with pytest.raises(LayoutError):
        batch_loss_and_grad(spec, params, x, y, head_slice=(4, 7))


def test_per_example_mean_equals_batch_gradient(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    x, y = _batch(n=9)
    _, batch_grad = batch_loss_and_grad(tiny_spec, tiny_params, x, y)
    grads = per_example_grads(tiny_spec, tiny_params, (x, y))
    mean = np.mean([g.grad.values for g in grads], axis=0)
    np.testing.assert_allclose(mean, batch_grad.values, rtol=0, atol=1e-12)
    assert [g.example_index for g in grads] == list(range(9))
    assert all(g.label_source is LabelSource.EMPIRICAL for g in grads)


def test_per_example_grads_are_worker_independent(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    data = _batch(n=7)
    serial = per_example_grads(tiny_spec, tiny_params, data)
    threaded = per_example_grads(tiny_spec, tiny_params, data, workers=3)
    assert all(a.grad.equals(b.grad) for a, b in zip(serial, threaded))


def test_per_example_grads_validates_batch(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    with pytest.raises(InputError):
        per_example_grads(tiny_spec, tiny_params, (np.zeros((0, 4)), np.zeros(0, dtype=int)))
    with pytest.raises(LayoutError):
        per_example_grads(tiny_spec, tiny_params, (np.zeros((3, 4)), np.zeros(2, dtype=int)))
    with pytest.raises(InputError):
        loss_and_grad(tiny_spec, tiny_params, np.zeros((2, 4)), [0, 1])


def test_out_of_range_labels_are_rejected(tiny_spec: MlpSpec, tiny_params: ParamVector) -> None:
    with pytest.raises(InputError):
        batch_loss_and_grad(tiny_spec, tiny_params, np.zeros((1, 4)), [3])
    with pytest.raises(InputError):
        batch_loss_and_grad(tiny_spec, tiny_params, np.zeros((1, 4)), [0.5])


def test_sample_label_follows_dominant_logit() -> None:
    spec = MlpSpec((1, 3))
    params = ParamVector.from_arrays([("layer0.weight", np.zeros((3, 1))), ("layer0.bias", [1e9, 0.0, 0.0])])
    rng = derive_rng(0, "tests", "sample")
    draws = [int(sample_label(spec, params, [0.0], rng)) for _ in range(200)]
    assert set(draws) == {0}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_sample_label_is_deterministic_per_stream(seed: int) -> None:
    spec = MlpSpec((2, 4), Activation.TANH)
    params = init_params(spec, derive_rng(seed, "p"))
    x = np.ones((5, 2))
    a = sample_label(spec, params, x, derive_rng(seed, "s"))
    b = sample_label(spec, params, x, derive_rng(seed, "s"))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (5,) and a.min() >= 0 and a.max() < 4


def test_sample_label_for_regression_adds_unit_noise() -> None:
    spec = MlpSpec((1, 1), head=Head.MSE)
    params = ParamVector.from_arrays([("layer0.weight", [[0.0]]), ("layer0.bias", [3.0])])
    draws = sample_label(spec, params, np.zeros((4000, 1)), derive_rng(0, "mse"))
    assert np.mean(draws) == pytest.approx(3.0, abs=0.1)
    assert np.std(draws) == pytest.approx(1.0, abs=0.1)


def test_sample_label_class_frequencies_match_softmax() -> None:
    probs = np.array([0.5, 0.3, 0.2])
    spec = MlpSpec((1, 3))
    params = ParamVector.from_arrays(
        [("layer0.weight", np.zeros((3, 1))), ("layer0.bias", np.log(probs))]
    )
    n = 20_000
    draws = sample_label(spec, params, np.zeros((n, 1)), derive_rng(3, "tests", "frequency"))

    counts = np.bincount(draws, minlength=3)
    sigma = np.sqrt(n * probs * (1.0 - probs))
    assert np.all(np.abs(counts - n * probs) <= 3.0 * sigma)


def test_predictions_and_accuracy() -> None:
    spec = MlpSpec((2, 2))
    params = ParamVector.from_arrays([("layer0.weight", np.eye(2)), ("layer0.bias", np.zeros(2))])
    x = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]])
    np.testing.assert_array_equal(predict(spec, params, x), [0, 1, 0])
    np.testing.assert_allclose(predictive_probs(spec, params, x).sum(axis=1), 1.0)
    assert accuracy(spec, params, x, [0, 1, 1]) == pytest.approx(2 / 3)
    with pytest.raises(InputError):
        accuracy(spec, params, np.zeros((0, 2)), [])


def test_predictive_probs_need_classification_head() -> None:
    spec = MlpSpec((2, 2), head=Head.MSE)
    with pytest.raises(InputError):
        predictive_probs(spec, init_params(spec, derive_rng(0, "x")), np.zeros(2))
