from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import structlog

from src.core.container import MAGIC_FISHER, read_container, write_container
from src.core.exceptions import ContainerFormatError, InputError, LayoutError, NumericError
from src.nn.params import ParamVector

__all__: list[str] = [
    "FISHER_FORMAT_VERSION",
    "FisherKind",
    "Scaling",
    "FisherMeta",
    "FisherDiagonal",
    "rescale",
    "save_fisher",
    "load_fisher",
    "load_fisher_with_extras",
]

logger = structlog.get_logger(__name__)

FISHER_FORMAT_VERSION: int = 1

FloatArray = npt.NDArray[np.float64]


class FisherKind(str, Enum):
    EMPIRICAL = "empirical"
    STANDARD_MC = "standard_mc"
    JOINT_EMPIRICAL = "joint_empirical"
    SQUISHER = "squisher"
    ORACLE_STANDARD = "oracle_standard"
    ORACLE_JOINT = "oracle_joint"
    IDENTITY = "identity"


class Scaling(str, Enum):
    """Whether values are a sum over the N examples or that sum divided by N."""

    SUM_OVER_N = "sum_over_N"
    MEAN_OVER_N = "mean_over_N"


@dataclass(frozen=True)
class FisherMeta:
    """Estimator details that travel with the values; ``None`` means not applicable."""

    mc_samples: Optional[int] = None
    beta2: Optional[float] = None
    bias_corrected: Optional[bool] = None
    steps: Optional[int] = None
    batch_size: Optional[int] = None
    label_source: Optional[str] = None
    trials: Optional[int] = None
    dropped_partial_batches: Optional[int] = None

    def to_json(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_json(cls, raw: Mapping[str, Any]) -> "FisherMeta":
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ContainerFormatError("meta", f"unknown keys {sorted(unknown)}")
        return cls(**dict(raw))


@dataclass(frozen=True)
class FisherDiagonal:
    """Non-negative per-parameter importance in the model's parameter layout.

    Attributes:
        values: One entry per parameter.
        kind: Which estimator produced the values.
        scaling: ``sum_over_N`` or ``mean_over_N``.
        n_data: The N the values were computed over.
    """

    values: ParamVector
    kind: FisherKind
    scaling: Scaling
    n_data: int
    meta: FisherMeta = field(default_factory=FisherMeta)

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", FisherKind(self.kind))
        object.__setattr__(self, "scaling", Scaling(self.scaling))
        if self.n_data <= 0:
            raise InputError("n_data must be positive")
        v = self.values.values
        if not np.all(np.isfinite(v)):
            raise NumericError("Fisher values must be finite")
        if np.any(v < 0.0):
            raise NumericError("Fisher values must be non-negative")

    @property
    def array(self) -> FloatArray:
        return self.values.values

    def scaled(self, factor: float) -> "FisherDiagonal":
        """Same provenance, values multiplied by *factor* (> 0)."""
        if factor <= 0.0:
            raise InputError("scale factor must be positive")
        return replace(self, values=self.values.with_values(self.array * factor))


def rescale(f: FisherDiagonal, target: Scaling | str) -> FisherDiagonal:
    """Convert between ``sum_over_N`` and ``mean_over_N`` by an exact factor N."""
    target = Scaling(target)
    if f.scaling is target:
        return f
    if target is Scaling.MEAN_OVER_N:
        values = f.array / f.n_data
    else:
        values = f.array * f.n_data
    return replace(f, values=f.values.with_values(values), scaling=target)


def save_fisher(
    f: FisherDiagonal,
    path: Union[str, Path],
    *,
    extra_header: Optional[Mapping[str, Any]] = None,
    extra_arrays: Sequence[Tuple[str, FloatArray]] = (),
) -> Path:
    """Write *f* (plus optional extra arrays such as an anchor's θ̂)."""
    header: Dict[str, Any] = {
        "kind": f.kind.value,
        "scaling": f.scaling.value,
        "n_data": f.n_data,
        "meta": f.meta.to_json(),
        "groups": f.values.layout_json(),
    }
    if extra_header:
        header["extra"] = dict(extra_header)
    arrays = [("values", f.array), *extra_arrays]
    target = write_container(path, MAGIC_FISHER, FISHER_FORMAT_VERSION, header, arrays)
    logger.info("fisher_saved", path=str(target), kind=f.kind.value, scaling=f.scaling.value)
    return target


def load_fisher_with_extras(
    path: Union[str, Path],
) -> Tuple[FisherDiagonal, Dict[str, Any], Dict[str, ParamVector]]:
    """Read a Fisher container; returns the Fisher, extra header and extra arrays."""
    _, header, arrays = read_container(path, MAGIC_FISHER, (FISHER_FORMAT_VERSION,))
    try:
        groups = ParamVector.layout_from_json(header["groups"])
    except KeyError as exc:
        raise ContainerFormatError("groups", "missing from Fisher header") from exc
    except LayoutError as exc:
        raise ContainerFormatError("groups", str(exc)) from exc
    vectors: Dict[str, ParamVector] = {}
    for name, array in arrays.items():
        try:
            vectors[name] = ParamVector(array, groups)
        except LayoutError as exc:
            raise ContainerFormatError(name, str(exc)) from exc
    if "values" not in vectors:
        raise ContainerFormatError("values", "array missing from payload")
    for key in ("kind", "scaling", "n_data"):
        if key not in header:
            raise ContainerFormatError(key, "missing from Fisher header")
    try:
        fisher = FisherDiagonal(
            values=vectors.pop("values"),
            kind=FisherKind(header["kind"]),
            scaling=Scaling(header["scaling"]),
            n_data=int(header["n_data"]),
            meta=FisherMeta.from_json(header.get("meta", {})),
        )
    except (ValueError, TypeError, ArithmeticError) as exc:
        raise ContainerFormatError("values", str(exc)) from exc
    return fisher, dict(header.get("extra", {})), vectors


def load_fisher(path: Union[str, Path]) -> FisherDiagonal:
    """Read a Fisher container written by :func:`save_fisher`."""
    return load_fisher_with_extras(path)[0]
