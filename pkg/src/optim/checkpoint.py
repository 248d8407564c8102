"""
Checkpoints: parameters, optimizer state and provenance in one container.

The container is the shared ``SQSHCKPT`` format (see
:mod:`src.core.container`). The JSON header carries the MLP spec, the
parameter group table, the optimizer hyperparameters and the provenance;
the payload carries ``params``, ``m`` and ``v`` in that order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import structlog

from src.core.container import MAGIC_CHECKPOINT, read_container, write_container
from src.core.exceptions import ContainerFormatError, InputError, LayoutError
from src.nn.mlp import MlpSpec
from src.nn.params import ParamVector
from src.optim.state import OptimizerKind, OptimizerState

__all__: list[str] = [
    "CHECKPOINT_FORMAT_VERSION",
    "Provenance",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

logger = structlog.get_logger(__name__)

CHECKPOINT_FORMAT_VERSION: int = 1


@dataclass(frozen=True)
class Provenance:
    """Where a checkpoint came from.

    ``dataset_size`` (N) and ``batch_size`` (B) are what the Squisher rescale
    needs. ``data`` holds the generator spec (and ``task_index`` the task) so
    the training split can be rebuilt; merged checkpoints list their parents
    in ``parent_checksums``.
    """

    dataset_id: str
    dataset_size: int
    batch_size: int
    steps: int
    seed: int
    task_index: Optional[int] = None
    data: Optional[Dict[str, Any]] = None
    dropped_partial_batches: int = 0
    parent_checksums: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.dataset_size <= 0 or self.batch_size <= 0:
            raise InputError("dataset_size and batch_size must be positive")
        object.__setattr__(self, "parent_checksums", tuple(self.parent_checksums))

    def to_json(self) -> Dict[str, Any]:
        raw = asdict(self)
        raw["parent_checksums"] = list(self.parent_checksums)
        return raw

    @classmethod
    def from_json(cls, raw: Dict[str, Any]) -> "Provenance":
        return cls(
            dataset_id=str(raw["dataset_id"]),
            dataset_size=int(raw["dataset_size"]),
            batch_size=int(raw["batch_size"]),
            steps=int(raw["steps"]),
            seed=int(raw["seed"]),
            task_index=raw.get("task_index"),
            data=raw.get("data"),
            dropped_partial_batches=int(raw.get("dropped_partial_batches", 0)),
            parent_checksums=tuple(raw.get("parent_checksums", ())),
        )


@dataclass(frozen=True)
class Checkpoint:
    mlp_spec: MlpSpec
    params: ParamVector
    optimizer_state: OptimizerState
    provenance: Provenance
    format_version: int = CHECKPOINT_FORMAT_VERSION

    def __post_init__(self) -> None:
        if self.params.groups != self.mlp_spec.layout():
            raise LayoutError("checkpoint parameters do not match the MLP spec")
        self.params.require_compatible(self.optimizer_state.m, "optimizer state")
        if self.provenance.steps != self.optimizer_state.t:
            raise InputError(
                f"provenance steps {self.provenance.steps} != optimizer t {self.optimizer_state.t}"
            )

    def equals(self, other: "Checkpoint") -> bool:
        """Bit-exact equality of every stored field."""
        a, b = self.optimizer_state, other.optimizer_state
        return (
            self.format_version == other.format_version
            and self.mlp_spec == other.mlp_spec
            and self.provenance == other.provenance
            and a.hyperparameters() == b.hyperparameters()
            and self.params.equals(other.params)
            and a.m.equals(b.m)
            and a.v.equals(b.v)
        )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Write *ckpt* to *path*; ``load_checkpoint`` restores it bit-exactly."""
    header = {
        "spec": ckpt.mlp_spec.to_json(),
        "groups": ckpt.params.layout_json(),
        "optimizer": ckpt.optimizer_state.hyperparameters(),
        "provenance": ckpt.provenance.to_json(),
    }
    arrays = [
        ("params", ckpt.params.values),
        ("m", ckpt.optimizer_state.m.values),
        ("v", ckpt.optimizer_state.v.values),
    ]
    target = write_container(path, MAGIC_CHECKPOINT, ckpt.format_version, header, arrays)
    logger.info(
        "checkpoint_saved",
        path=str(target),
        steps=ckpt.provenance.steps,
        optimizer=ckpt.optimizer_state.kind.value,
    )
    return target


def _require(header: Dict[str, Any], key: str) -> Any:
    if key not in header:
        raise ContainerFormatError(key, "missing from checkpoint header")
    return header[key]


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ContainerFormatError: naming the failing field (``magic``,
            ``format_version``, ``payload``, ``spec``, ``groups``, ...).
    """
    version, header, arrays = read_container(
        path, MAGIC_CHECKPOINT, (CHECKPOINT_FORMAT_VERSION,)
    )
    try:
        spec = MlpSpec.from_json(_require(header, "spec"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError("spec", str(exc)) from exc
    try:
        groups = ParamVector.layout_from_json(_require(header, "groups"))
    except LayoutError as exc:
        raise ContainerFormatError("groups", str(exc)) from exc
    if groups != spec.layout():
        raise ContainerFormatError("groups", "group table does not match the MLP spec")

    vectors: Dict[str, ParamVector] = {}
    for name in ("params", "m", "v"):
        if name not in arrays:
            raise ContainerFormatError(name, "array missing from payload")
        try:
            vectors[name] = ParamVector(arrays[name], groups)
        except LayoutError as exc:
            raise ContainerFormatError(name, str(exc)) from exc

    hyper = _require(header, "optimizer")
    try:
        state = OptimizerState(
            kind=OptimizerKind(hyper["kind"]),
            t=int(hyper["t"]),
            m=vectors["m"],
            v=vectors["v"],
            lr=float(hyper["lr"]),
            beta1=float(hyper["beta1"]),
            beta2=float(hyper["beta2"]),
            eps=float(hyper["eps"]),
            weight_decay=float(hyper["weight_decay"]),
        )
    except (KeyError, TypeError, ValueError, ArithmeticError) as exc:
        raise ContainerFormatError("optimizer", str(exc)) from exc

    try:
        provenance = Provenance.from_json(_require(header, "provenance"))
        ckpt = Checkpoint(spec, vectors["params"], state, provenance, version)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerFormatError("provenance", str(exc)) from exc
    logger.debug("checkpoint_loaded", path=str(path), steps=provenance.steps)
    return ckpt
