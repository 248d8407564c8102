"""
Diagonal Fisher estimators.

Per-example estimators (empirical, Monte-Carlo standard, joint) need the
model and data; the Squisher only needs a checkpoint. Every estimator that
takes data accepts a ``provider`` so alternative gradient sources can be
plugged in; the default is :func:`src.nn.mlp.per_example_grads`.
"""

from __future__ import annotations

from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import numpy.typing as npt
import structlog

from src.core.exceptions import InputError
from src.core.rng import derive_rng
from src.fisher.types import FisherDiagonal, FisherKind, FisherMeta, Scaling
from src.nn.mlp import (
    Head,
    HeadSlice,
    LabelSource,
    MlpSpec,
    PerExampleGradient,
    batch_loss_and_grad,
    per_example_grads,
    sample_label,
)
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint
from src.optim.state import accumulator

__all__: list[str] = [
    "GradientProvider",
    "empirical_fisher",
    "standard_fisher_mc",
    "joint_empirical_fisher",
    "batched_joint_empirical_fisher",
    "minibatch_joint_estimate",
    "squisher",
]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]
Dataset = Tuple[Any, Any]
GradientProvider = Callable[..., List[PerExampleGradient]]


def _gradient_matrix(
    provider: GradientProvider,
    spec: MlpSpec,
    params: ParamVector,
    data: Dataset,
    *,
    label_source: LabelSource = LabelSource.EMPIRICAL,
    head_slice: HeadSlice = None,
) -> Tuple[FloatArray, ParamVector]:
    """Stack per-example gradients into an ``(N, P)`` matrix."""
    grads = provider(spec, params, data, label_source=label_source, head_slice=head_slice)
    if not grads:
        raise InputError("gradient provider returned no gradients")
    template = grads[0].grad
    for g in grads[1:]:
        template.require_compatible(g.grad, "per-example gradient")
    return np.stack([g.grad.values for g in grads]), template


def _n_examples(data: Dataset) -> int:
    n = len(data[1])
    if n == 0:
        raise InputError("estimator needs at least one example")
    return n


def _finish(
    template: ParamVector,
    values: FloatArray,
    kind: FisherKind,
    scaling: Scaling | str,
    n: int,
    meta: FisherMeta,
) -> FisherDiagonal:
    scaling = Scaling(scaling)
    if scaling is Scaling.MEAN_OVER_N:
        values = values / n
    return FisherDiagonal(template.with_values(values), kind, scaling, n, meta)


def empirical_fisher(
    spec: MlpSpec,
    params: ParamVector,
    data: Dataset,
    scaling: Scaling | str = Scaling.SUM_OVER_N,
    *,
    head_slice: HeadSlice = None,
    provider: GradientProvider = per_example_grads,
) -> FisherDiagonal:
    """Σₙ gₙ² with the dataset's labels (÷N for ``mean_over_N``)."""
    n = _n_examples(data)
    grads, template = _gradient_matrix(provider, spec, params, data, head_slice=head_slice)
    values = np.einsum("np,np->p", grads, grads)
    logger.debug("empirical_fisher_computed", n_data=n, num_params=len(template))
    return _finish(template, values, FisherKind.EMPIRICAL, scaling, n, FisherMeta())


def joint_empirical_fisher(
    spec: MlpSpec,
    params: ParamVector,
    data: Dataset,
    scaling: Scaling | str = Scaling.SUM_OVER_N,
    *,
    head_slice: HeadSlice = None,
    provider: GradientProvider = per_example_grads,
) -> FisherDiagonal:
    """(Σₙ gₙ)² with the dataset's labels (÷N for ``mean_over_N``).

    In mean form this is N·(∇L)² where L is the mean loss.
    """
    n = _n_examples(data)
    grads, template = _gradient_matrix(provider, spec, params, data, head_slice=head_slice)
    total = grads.sum(axis=0)
    return _finish(template, total * total, FisherKind.JOINT_EMPIRICAL, scaling, n, FisherMeta())


def batched_joint_empirical_fisher(
    spec: MlpSpec,
    params: ParamVector,
    data: Dataset,
    batch_size: int,
    *,
    head_slice: HeadSlice = None,
) -> FisherDiagonal:
    """Mean over disjoint batches of N·(mean batch gradient)².

    This is the Squisher's quantity without the moving average: one frozen
    pass over consecutive batches of *batch_size*, each contributing the
    squared mean-loss gradient. A trailing partial batch is dropped. With
    ``batch_size == N`` it equals :func:`joint_empirical_fisher` in
    ``mean_over_N`` form.
    """
    xs, ys = np.asarray(data[0]), np.asarray(data[1])
    n = _n_examples(data)
    if not 1 <= batch_size <= n:
        raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
    num_batches = n // batch_size
    acc = np.zeros(len(params))
    for b in range(num_batches):
        window = slice(b * batch_size, (b + 1) * batch_size)
        _, grad = batch_loss_and_grad(spec, params, xs[window], ys[window], head_slice)
        acc += grad.values * grad.values
    values = n * acc / num_batches
    meta = FisherMeta(
        batch_size=batch_size,
        dropped_partial_batches=int(n % batch_size != 0),
    )
    return FisherDiagonal(
        params.with_values(values), FisherKind.JOINT_EMPIRICAL, Scaling.SUM_OVER_N, n, meta
    )


class _LabelGradients:
    """Memoised per-example gradients keyed by ``(example, label)``.

    Classification labels are discrete, so repeated draws of the same label
    reuse one reverse pass; regression labels are continuous and are never
    cached.
    """

    def __init__(
        self,
        provider: GradientProvider,
        spec: MlpSpec,
        params: ParamVector,
        inputs: FloatArray,
        label_source: LabelSource,
        head_slice: HeadSlice,
    ) -> None:
        self._provider = provider
        self._spec = spec
        self._params = params
        self._inputs = inputs
        self._label_source = label_source
        self._head_slice = head_slice
        self._cache: Dict[Tuple[int, int], FloatArray] = {}

    def _compute(self, index: int, label: Any) -> FloatArray:
        x = self._inputs[index : index + 1]
        y = np.asarray([label])
        grads = self._provider(
            self._spec,
            self._params,
            (x, y),
            label_source=self._label_source,
            head_slice=self._head_slice,
        )
        return grads[0].grad.values

    def get(self, index: int, label: Any) -> FloatArray:
        if self._spec.head is not Head.SOFTMAX_XENT:
            return self._compute(index, label)
        key = (index, int(label))
        if key not in self._cache:
            self._cache[key] = self._compute(index, label)
        return self._cache[key]


def standard_fisher_mc(
    spec: MlpSpec,
    params: ParamVector,
    inputs: Any,
    mc_samples: int = 1,
    rng: Optional[np.random.Generator] = None,
    scaling: Scaling | str = Scaling.SUM_OVER_N,
    *,
    head_slice: HeadSlice = None,
    provider: GradientProvider = per_example_grads,
) -> FisherDiagonal:
    """Σₙ (1/S) Σₛ ĝₙₛ² with ŷ drawn from the model at each input."""
    if mc_samples < 1:
        raise InputError("mc_samples must be at least 1")
    xs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = xs.shape[0]
    if n == 0:
        raise InputError("estimator needs at least one example")
    rng = rng if rng is not None else derive_rng(0, "fisher", "standard_mc")
    grads = _LabelGradients(provider, spec, params, xs, LabelSource.SAMPLED, head_slice)

    acc: Optional[FloatArray] = None
    for _ in range(mc_samples):
        labels = sample_label(spec, params, xs, rng, head_slice)
        for index in range(n):
            g = grads.get(index, labels[index])
            acc = g * g if acc is None else acc + g * g
    assert acc is not None
    values = acc / mc_samples
    meta = FisherMeta(mc_samples=mc_samples, label_source=LabelSource.SAMPLED.value)
    return _finish(params, values, FisherKind.STANDARD_MC, scaling, n, meta)


def minibatch_joint_estimate(
    spec: MlpSpec,
    params: ParamVector,
    data: Dataset,
    batch_size: int,
    trials: int,
    rng: np.random.Generator,
    *,
    label_source: LabelSource | str = LabelSource.SAMPLED,
    head_slice: HeadSlice = None,
    provider: GradientProvider = per_example_grads,
) -> FisherDiagonal:
    """Average over *trials* of (N/B)·(Σ_{n∈batch} ĝₙ)², batches drawn without replacement.

    With sampled labels the expectation is the joint Fisher for any B; with
    the dataset's labels it is not.
    """
    label_source = LabelSource(label_source)
    xs = np.atleast_2d(np.asarray(data[0], dtype=np.float64))
    ys = np.asarray(data[1])
    n = _n_examples(data)
    if not 1 <= batch_size <= n:
        raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
    if trials < 1:
        raise InputError("trials must be at least 1")
    grads = _LabelGradients(provider, spec, params, xs, label_source, head_slice)

    acc = np.zeros(len(params))
    for _ in range(trials):
        batch = rng.choice(n, size=batch_size, replace=False)
        if label_source is LabelSource.SAMPLED:
            labels = sample_label(spec, params, xs[batch], rng, head_slice)
        else:
            labels = ys[batch]
        total = np.zeros(len(params))
        for index, label in zip(batch, labels):
            total += grads.get(int(index), label)
        acc += (n / batch_size) * total * total
    meta = FisherMeta(batch_size=batch_size, trials=trials, label_source=label_source.value)
    return FisherDiagonal(
        params.with_values(acc / trials), FisherKind.JOINT_EMPIRICAL, Scaling.SUM_OVER_N, n, meta
    )


def squisher(ckpt: Checkpoint, *, bias_corrected: bool = True) -> FisherDiagonal:
    """N times the optimizer's squared-gradient accumulator, read from *ckpt* alone.

    No data access and no backward pass. The result approximates the joint
    Fisher and is tagged ``sum_over_N``.

    Raises:
        AccumulatorUnavailableError: for SGD checkpoints or before any step.
    """
    state = ckpt.optimizer_state
    n = ckpt.provenance.dataset_size
    v = accumulator(state, bias_corrected=bias_corrected)
    meta = FisherMeta(
        beta2=state.beta2,
        bias_corrected=bias_corrected,
        steps=state.t,
        batch_size=ckpt.provenance.batch_size,
    )
    logger.debug("squisher_computed", n_data=n, steps=state.t, bias_corrected=bias_corrected)
    return FisherDiagonal(
        ckpt.params.with_values(n * v), FisherKind.SQUISHER, Scaling.SUM_OVER_N, n, meta
    )
