from __future__ import annotations

from .mlp import (
    Activation,
    Head,
    HeadSlice,
    LabelSource,
    MlpSpec,
    PerExampleGradient,
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
from .params import Layout, ParamGroup, ParamVector, layout_checksum
from .tensor import Labels, Tensor, as_class_labels, as_tensor

__all__: list[str] = [
    "Activation",
    "Head",
    "HeadSlice",
    "LabelSource",
    "Labels",
    "Layout",
    "MlpSpec",
    "ParamGroup",
    "ParamVector",
    "PerExampleGradient",
    "Tensor",
    "accuracy",
    "as_class_labels",
    "as_tensor",
    "batch_loss_and_grad",
    "forward",
    "init_params",
    "layout_checksum",
    "loss_and_grad",
    "per_example_grads",
    "predict",
    "predictive_probs",
    "sample_label",
]
