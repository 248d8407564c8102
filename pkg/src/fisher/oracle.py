"""
Exact Fisher expectations by enumeration, for small classification problems.

Cost grows as Cᴺ (or C(N,B)·Cᴮ for mini-batches); anything past the
configured capacity raises :class:`CapacityError` instead of running.
"""

from __future__ import annotations

import itertools
import math
from enum import Enum
from typing import Any, Optional, Tuple

import numpy as np
import numpy.typing as npt
import structlog

from src.core.config import get_settings
from src.core.exceptions import CapacityError, InputError
from src.fisher.types import FisherDiagonal, FisherKind, FisherMeta, Scaling
from src.nn.mlp import Head, HeadSlice, LabelSource, MlpSpec, loss_and_grad, predictive_probs
from src.nn.params import ParamVector

__all__: list[str] = ["OracleMode", "oracle_fisher", "minibatch_joint_expectation"]

logger = structlog.get_logger(__name__)

FloatArray = npt.NDArray[np.float64]

_CHUNK = 4096


class OracleMode(str, Enum):
    STANDARD = "standard"
    JOINT = "joint"


def _class_gradients(
    spec: MlpSpec, params: ParamVector, xs: FloatArray, head_slice: HeadSlice
) -> Tuple[FloatArray, FloatArray]:
    """Return ``probs[n, c]`` and ``grads[n, c, :]`` for every example and class."""
    if spec.head is not Head.SOFTMAX_XENT:
        raise InputError("exact enumeration needs a classification head")
    probs = predictive_probs(spec, params, xs, head_slice)
    n, c = probs.shape
    grads = np.empty((n, c, len(params)))
    for i in range(n):
        for label in range(c):
            _, g = loss_and_grad(spec, params, xs[i], label, head_slice)
            grads[i, label] = g.values
    return probs, grads


def _check_capacity(count: int, capacity: Optional[int], what: str) -> None:
    limit = capacity if capacity is not None else get_settings().oracle_capacity
    if count > limit:
        raise CapacityError(f"{what} needs {count} terms, above capacity {limit}")


def _joint_second_moment(probs: FloatArray, grads: FloatArray) -> FloatArray:
    """E_{y ~ Π p(·|xₙ)} [(Σₙ g(xₙ, yₙ))²] by enumerating every label vector."""
    n, c, p = grads.shape
    total = c**n
    radix = c ** np.arange(n - 1, -1, -1, dtype=np.int64)
    rows = np.arange(n)
    acc = np.zeros(p)
    for start in range(0, total, _CHUNK):
        codes = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        labels = (codes[:, None] // radix[None, :]) % c
        weights = np.prod(probs[rows[None, :], labels], axis=1)
        sums = grads[rows[None, :], labels].sum(axis=1)
        acc += weights @ (sums * sums)
    return acc


def oracle_fisher(
    spec: MlpSpec,
    params: ParamVector,
    inputs: Any,
    mode: OracleMode | str = OracleMode.STANDARD,
    *,
    head_slice: HeadSlice = None,
    capacity: Optional[int] = None,
) -> FisherDiagonal:
    """Exact standard or joint Fisher, ``sum_over_N``.

    ``standard``: Σₙ Σ_c p(c|xₙ)·g(xₙ, c)².
    ``joint``: Σ over every label vector y of Πₙ p(yₙ|xₙ)·(Σₙ g(xₙ, yₙ))².

    Raises:
        CapacityError: if the term count (Cᴺ joint, N·C standard) exceeds
            *capacity* (default from settings).
    """
    mode = OracleMode(mode)
    xs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    n = xs.shape[0]
    if n == 0:
        raise InputError("oracle needs at least one example")
    classes = spec.output_dim if head_slice is None else head_slice[1] - head_slice[0]
    if mode is OracleMode.JOINT:
        _check_capacity(classes**n, capacity, "joint oracle")
    else:
        _check_capacity(n * classes, capacity, "standard oracle")
    probs, grads = _class_gradients(spec, params, xs, head_slice)

    if mode is OracleMode.STANDARD:
        values = np.einsum("nc,ncp->p", probs, grads * grads)
        kind = FisherKind.ORACLE_STANDARD
    else:
        values = _joint_second_moment(probs, grads)
        kind = FisherKind.ORACLE_JOINT
    logger.debug("oracle_fisher_computed", mode=mode.value, n_data=n, classes=classes)
    return FisherDiagonal(params.with_values(values), kind, Scaling.SUM_OVER_N, n)


def minibatch_joint_expectation(
    spec: MlpSpec,
    params: ParamVector,
    data: Tuple[Any, Any],
    batch_size: int,
    label_source: LabelSource | str = LabelSource.SAMPLED,
    *,
    head_slice: HeadSlice = None,
    capacity: Optional[int] = None,
) -> FisherDiagonal:
    """Exact expectation of (N/B)·(Σ_{n∈batch} ĝₙ)² over uniform B-subsets.

    With sampled labels every label vector of the batch is enumerated too;
    with the dataset's labels only the subsets are.
    """
    label_source = LabelSource(label_source)
    xs = np.atleast_2d(np.asarray(data[0], dtype=np.float64))
    ys = np.asarray(data[1]).astype(np.int64)
    n = xs.shape[0]
    if not 1 <= batch_size <= n:
        raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
    classes = spec.output_dim if head_slice is None else head_slice[1] - head_slice[0]
    subsets = math.comb(n, batch_size)
    per_subset = classes**batch_size if label_source is LabelSource.SAMPLED else 1
    _check_capacity(subsets * per_subset, capacity, "mini-batch expectation")
    probs, grads = _class_gradients(spec, params, xs, head_slice)

    acc = np.zeros(len(params))
    for subset in itertools.combinations(range(n), batch_size):
        idx = list(subset)
        if label_source is LabelSource.SAMPLED:
            acc += _joint_second_moment(probs[idx], grads[idx])
        else:
            total = grads[idx, ys[idx]].sum(axis=0)
            acc += total * total
    values = (n / batch_size) * acc / subsets
    meta = FisherMeta(batch_size=batch_size, label_source=label_source.value)
    return FisherDiagonal(
        params.with_values(values), FisherKind.JOINT_EMPIRICAL, Scaling.SUM_OVER_N, n, meta
    )
