"""
Multi-layer perceptrons with an explicit reverse pass.

The forward pass records a tape of pre-activations and activations; the
reverse pass walks the tape backwards, producing the gradient in the flat
:class:`ParamVector` coordinate system (``layer{i}.weight`` then
``layer{i}.bias`` for every affine layer).

Two loss heads are supported:

* ``softmax_xent`` – cross-entropy on softmax logits; the likelihood is the
  categorical distribution over classes.
* ``mse`` – ``½‖f − y‖²``; the likelihood is a unit-variance Gaussian centred
  on the network output, so ``-log p`` and the loss differ by a constant.

Every loss, gradient and sampling operation accepts an optional *head
slice* ``(start, stop)`` restricting the output units that participate.
Task-incremental training gives each task its own slice of one shared
output layer; labels are always local to the slice.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from src.core.exceptions import InputError, LayoutError
from src.nn.params import Layout, ParamGroup, ParamVector
from src.nn.tensor import Labels, Tensor, as_class_labels, as_tensor

__all__: list[str] = [
    "Activation",
    "Head",
    "LabelSource",
    "MlpSpec",
    "HeadSlice",
    "PerExampleGradient",
    "init_params",
    "forward",
    "loss_and_grad",
    "batch_loss_and_grad",
    "per_example_grads",
    "sample_label",
    "predictive_probs",
    "predict",
    "accuracy",
]

FloatArray = npt.NDArray[np.float64]
HeadSlice = Optional[Tuple[int, int]]


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"


class Head(str, Enum):
    SOFTMAX_XENT = "softmax_xent"
    MSE = "mse"


class LabelSource(str, Enum):
    """Where the label behind a per-example gradient came from."""

    EMPIRICAL = "empirical"
    SAMPLED = "sampled"


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully connected network.

    Attributes:
        layer_sizes: Widths from input to output; at least two entries.
        activation: Hidden-layer nonlinearity. The output layer is affine.
        head: Loss head, which also fixes the label type.
    """

    layer_sizes: Tuple[int, ...]
    activation: Activation = Activation.RELU
    head: Head = Head.SOFTMAX_XENT

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise InputError("an MLP needs at least an input and an output layer")
        if any(s <= 0 for s in sizes):
            raise InputError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "head", Head(self.head))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_affine(self) -> int:
        return len(self.layer_sizes) - 1

    def layout(self) -> Layout:
        groups: List[ParamGroup] = []
        offset = 0
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_sizes, self.layer_sizes[1:])):
            groups.append(ParamGroup(f"layer{i}.weight", offset, fan_in * fan_out, (fan_out, fan_in)))
            offset += fan_in * fan_out
            groups.append(ParamGroup(f"layer{i}.bias", offset, fan_out, (fan_out,)))
            offset += fan_out
        return tuple(groups)

    @property
    def num_params(self) -> int:
        return sum(g.length for g in self.layout())

    def to_json(self) -> Dict[str, Any]:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation.value,
            "head": self.head.value,
        }

    @classmethod
    def from_json(cls, raw: Dict[str, Any]) -> "MlpSpec":
        return cls(
            layer_sizes=tuple(raw["layer_sizes"]),
            activation=Activation(raw["activation"]),
            head=Head(raw["head"]),
        )


@dataclass(frozen=True)
class PerExampleGradient:
    """Gradient of one example's loss; ``label_source`` says which label was used."""

    grad: ParamVector
    example_index: int
    label_source: LabelSource


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """Draw initial weights (He for relu, Glorot for tanh) with zero biases."""
    named: List[Tuple[str, FloatArray]] = []
    for i, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes, spec.layer_sizes[1:])):
        if spec.activation is Activation.RELU:
            scale = np.sqrt(2.0 / fan_in)
        else:
            scale = np.sqrt(2.0 / (fan_in + fan_out))
        named.append((f"layer{i}.weight", rng.standard_normal((fan_out, fan_in)) * scale))
        named.append((f"layer{i}.bias", np.zeros(fan_out)))
    return ParamVector.from_arrays(named)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


def _affine_layers(spec: MlpSpec, params: ParamVector) -> List[Tuple[FloatArray, FloatArray]]:
    if params.groups != spec.layout():
        raise LayoutError("parameter layout does not match the MLP spec")
    tensors = params.unflatten()
    return [
        (tensors[f"layer{i}.weight"], tensors[f"layer{i}.bias"])
        for i in range(spec.num_affine)
    ]


def _as_batch(spec: MlpSpec, x: Any) -> FloatArray:
    array = as_tensor(x, "x")
    batch = array.reshape(1, -1) if array.ndim == 1 else array
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise LayoutError(
            f"input shape {array.shape} does not match input width {spec.input_dim}"
        )
    return batch


def _activate(spec: MlpSpec, z: FloatArray) -> FloatArray:
    if spec.activation is Activation.RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(spec: MlpSpec, z: FloatArray, a: FloatArray) -> FloatArray:
    if spec.activation is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


@dataclass
class _Tape:
    inputs: List[FloatArray]
    pre_activations: List[FloatArray]
    output: FloatArray


def _record(spec: MlpSpec, layers: List[Tuple[FloatArray, FloatArray]], batch: FloatArray) -> _Tape:
    inputs: List[FloatArray] = []
    pre: List[FloatArray] = []
    a = batch
    for i, (w, b) in enumerate(layers):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if i == len(layers) - 1 else _activate(spec, z)
    return _Tape(inputs=inputs, pre_activations=pre, output=a)


def _reverse(
    spec: MlpSpec,
    layers: List[Tuple[FloatArray, FloatArray]],
    tape: _Tape,
    d_out: FloatArray,
) -> FloatArray:
    """Propagate ``dLoss/dOutput`` back through the tape; returns the flat gradient."""
    chunks: List[FloatArray] = []
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        a_in = tape.inputs[i]
        chunks.append(delta.sum(axis=0))
        chunks.append((delta.T @ a_in).ravel())
        if i > 0:
            z_prev = tape.pre_activations[i - 1]
            delta = (delta @ w) * _activation_grad(spec, z_prev, a_in)
    chunks.reverse()
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# Heads
# ---------------------------------------------------------------------------


def _slice_bounds(spec: MlpSpec, head_slice: HeadSlice) -> Tuple[int, int]:
    if head_slice is None:
        return 0, spec.output_dim
    start, stop = int(head_slice[0]), int(head_slice[1])
    if not 0 <= start < stop <= spec.output_dim:
        raise LayoutError(f"head slice {head_slice} outside output width {spec.output_dim}")
    return start, stop


def _log_softmax(z: FloatArray) -> FloatArray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _head_loss(
    spec: MlpSpec,
    output: FloatArray,
    y: Any,
    head_slice: HeadSlice,
) -> Tuple[FloatArray, FloatArray]:
    """Return per-example losses ``(n,)`` and ``dloss_n/doutput`` ``(n, d_out)``."""
    start, stop = _slice_bounds(spec, head_slice)
    n = output.shape[0]
    active = output[:, start:stop]
    d_out = np.zeros_like(output)
    if spec.head is Head.SOFTMAX_XENT:
        labels = as_class_labels(np.asarray(y).reshape(-1), stop - start)
        if labels.size != n:
            raise LayoutError(f"{labels.size} labels for {n} examples")
        log_p = _log_softmax(active)
        losses = -log_p[np.arange(n), labels]
        grad = np.exp(log_p)
        grad[np.arange(n), labels] -= 1.0
        d_out[:, start:stop] = grad
        return losses, d_out
    targets = as_tensor(y, "y").reshape(n, -1)
    if targets.shape[1] != stop - start:
        raise LayoutError(f"target width {targets.shape[1]} does not match head width {stop - start}")
    residual = active - targets
    d_out[:, start:stop] = residual
    return 0.5 * np.sum(residual * residual, axis=1), d_out


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def forward(spec: MlpSpec, params: ParamVector, x: Any) -> Tensor:
    """Return logits (``softmax_xent``) or outputs (``mse``) for *x*.

    A single example ``(d,)`` yields ``(d_out,)``; a batch ``(n, d)`` yields
    ``(n, d_out)``.
    """
    layers = _affine_layers(spec, params)
    batch = _as_batch(spec, x)
    out = _record(spec, layers, batch).output
    return out[0] if np.ndim(x) == 1 else out


def batch_loss_and_grad(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    y: Any,
    head_slice: HeadSlice = None,
) -> Tuple[float, ParamVector]:
    """Mean loss over a batch and its gradient, from one aggregated reverse pass."""
    layers = _affine_layers(spec, params)
    batch = _as_batch(spec, x)
    tape = _record(spec, layers, batch)
    losses, d_out = _head_loss(spec, tape.output, y, head_slice)
    n = batch.shape[0]
    grad = _reverse(spec, layers, tape, d_out / n)
    return float(losses.mean()), params.with_values(grad)


def loss_and_grad(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    y: Any,
    head_slice: HeadSlice = None,
) -> Tuple[float, ParamVector]:
    """Loss of a single example and its exact gradient ``g_n``."""
    batch = _as_batch(spec, x)
    if batch.shape[0] != 1:
        raise InputError("loss_and_grad takes a single example; use batch_loss_and_grad")
    y_batch = np.asarray(y).reshape(1, -1) if spec.head is Head.MSE else np.asarray(y).reshape(1)
    return batch_loss_and_grad(spec, params, batch, y_batch, head_slice)


def per_example_grads(
    spec: MlpSpec,
    params: ParamVector,
    batch: Tuple[Any, Any],
    *,
    label_source: LabelSource = LabelSource.EMPIRICAL,
    head_slice: HeadSlice = None,
    workers: int = 1,
) -> List[PerExampleGradient]:
    """One independent reverse pass per example, returned in example order.

    *label_source* only tags the result; callers that sample labels pass the
    sampled labels in *batch*.
    """
    xs, ys = batch
    inputs = _as_batch(spec, xs)
    n = inputs.shape[0]
    if n == 0:
        raise InputError("per_example_grads needs a non-empty batch")
    targets = np.asarray(ys)
    if len(targets) != n:
        raise LayoutError(f"{len(targets)} labels for {n} examples")

    def _one(index: int) -> PerExampleGradient:
        _, grad = loss_and_grad(spec, params, inputs[index], targets[index], head_slice)
        return PerExampleGradient(grad=grad, example_index=index, label_source=label_source)

    if workers <= 1 or n == 1:
        return [_one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so results are index-ordered.
        return list(pool.map(_one, range(n)))


def sample_label(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    rng: np.random.Generator,
    head_slice: HeadSlice = None,
) -> Labels:
    """Draw a label from the model's predictive distribution at *x*.

    Classification draws a class from ``softmax(logits)``; regression adds
    unit-variance Gaussian noise to the output. A batch of inputs gives one
    label per row.
    """
    start, stop = _slice_bounds(spec, head_slice)
    out = np.atleast_2d(forward(spec, params, x))[:, start:stop]
    if spec.head is Head.SOFTMAX_XENT:
        probs = np.exp(_log_softmax(out))
        draws = np.array(
            [rng.choice(stop - start, p=row / row.sum()) for row in probs],
            dtype=np.int64,
        )
    else:
        draws = out + rng.standard_normal(out.shape)
    return draws[0] if np.ndim(x) == 1 else draws


def predictive_probs(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    head_slice: HeadSlice = None,
) -> FloatArray:
    """Class probabilities ``p(c | x, θ)`` over the head slice (classification only)."""
    if spec.head is not Head.SOFTMAX_XENT:
        raise InputError("predictive probabilities need a classification head")
    start, stop = _slice_bounds(spec, head_slice)
    out = np.atleast_2d(forward(spec, params, x))[:, start:stop]
    return np.exp(_log_softmax(out))


def predict(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    head_slice: HeadSlice = None,
) -> npt.NDArray[np.int64]:
    """Arg-max class over the head slice, local to the slice."""
    return predictive_probs(spec, params, x, head_slice).argmax(axis=1)


def accuracy(
    spec: MlpSpec,
    params: ParamVector,
    x: Any,
    y: Sequence[int] | npt.NDArray[Any],
    head_slice: HeadSlice = None,
) -> float:
    """Fraction of examples whose arg-max class equals the label."""
    labels = np.asarray(y).reshape(-1)
    if labels.size == 0:
        raise InputError("accuracy needs at least one example")
    return float(np.mean(predict(spec, params, x, head_slice) == labels))
