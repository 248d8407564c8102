from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt

from src.core.exceptions import InputError, NumericError

__all__: list[str] = ["Tensor", "Labels", "as_tensor", "as_class_labels"]

# A tensor is a float64 ndarray; shape and row-major data come with it.
Tensor = npt.NDArray[np.float64]
# Integer class indices for classification heads, real vectors for mse heads.
Labels = npt.NDArray[Any]


def as_tensor(x: Any, name: str = "tensor") -> Tensor:
    """Convert external input into a finite float64 array.

    Raises:
        NumericError: if any value is NaN or infinite.
    """
    try:
        array = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name}: cannot convert to float64 ({exc})") from exc
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name}: contains NaN or Inf")
    return array


def as_class_labels(y: Any, num_classes: int, name: str = "labels") -> npt.NDArray[np.int64]:
    """Validate integer class labels against ``[0, num_classes)``."""
    array = np.asarray(y)
    if array.dtype.kind not in "iu":
        if array.dtype.kind == "f" and np.all(np.isfinite(array)) and np.all(array == np.round(array)):
            array = array.astype(np.int64)
        else:
            raise InputError(f"{name}: class labels must be integers")
    labels = array.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(
            f"{name}: label out of class range [0, {num_classes})"
        )
    return labels
