"""
Experiment configuration.

A config file is TOML with one optional table per command (``[train]``,
``[fisher]``, ...) plus the shared ``[data]``, ``[model]`` and
``[optimizer]`` tables. ``--set dotted.key=value`` overrides are applied to
the parsed tree before validation. Unknown keys are rejected and every
validation problem is reported at once.
"""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, MutableMapping, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.core.exceptions import ConfigError, MissingArtifactError
from src.data.streams import GeneratorSpec
from src.ewc.continual import Scenario
from src.ewc.penalty import AnchorPolicy
from src.fisher.registry import ESTIMATORS
from src.fisher.types import Scaling
from src.nn.mlp import Activation
from src.optim.state import OptimizerKind
from src.optim.training import TrainSettings

__all__: list[str] = [
    "ModelConfig",
    "OptimizerConfig",
    "TrainSection",
    "FisherSection",
    "MergeSection",
    "PruneSection",
    "MaskSection",
    "EmbedSection",
    "EwcSection",
    "AblateSection",
    "ExperimentConfig",
    "apply_overrides",
    "load_config",
]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelConfig(_Section):
    hidden: List[int] = Field(default_factory=lambda: [32])
    activation: Activation = Activation.RELU

    @field_validator("hidden")
    @classmethod
    def _positive(cls, v: List[int]) -> List[int]:
        if any(h < 1 for h in v):
            raise ValueError("hidden widths must be positive")
        return v


class OptimizerConfig(_Section):
    kind: OptimizerKind = OptimizerKind.ADAM
    lr: float = Field(1e-2, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    weight_decay: float = Field(0.0, ge=0.0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(5, ge=0)

    def settings(self, **changes: Any) -> TrainSettings:
        values = self.model_dump()
        values["optimizer"] = values.pop("kind")
        values.update(changes)
        return TrainSettings(**values)


class TrainSection(_Section):
    task_index: int = Field(0, ge=0)
    init_from: Optional[Path] = None
    checkpoint_name: str = "checkpoint.sqsh"


class FisherSection(_Section):
    checkpoint: Optional[Path] = None
    estimator: str = "squisher"
    scaling: Scaling = Scaling.SUM_OVER_N
    mc_samples: int = Field(1, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    output_name: str = "fisher.sqsh"

    @field_validator("estimator")
    @classmethod
    def _known(cls, v: str) -> str:
        if v not in ESTIMATORS:
            raise ValueError(f"unknown estimator '{v}'; known: {sorted(ESTIMATORS)}")
        return v


MethodName = Literal["fisher", "squisher", "baseline"]


class MergeSection(_Section):
    checkpoints: List[Path] = Field(default_factory=list)
    base: Optional[Path] = None
    methods: List[MethodName] = Field(default_factory=lambda: ["fisher", "squisher", "baseline"])
    checkpoint_policy: Literal["final", "best"] = "final"
    epsilon: Optional[float] = Field(None, ge=0.0)


class PruneSection(_Section):
    checkpoint: Optional[Path] = None
    fractions: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.75])
    methods: List[MethodName] = Field(default_factory=lambda: ["fisher", "squisher", "baseline"])

    @field_validator("fractions")
    @classmethod
    def _in_unit_interval(cls, v: List[float]) -> List[float]:
        if not v or any(not 0.0 <= f <= 1.0 for f in v):
            raise ValueError("fractions must be a non-empty list of values in [0, 1]")
        return v


class MaskSection(_Section):
    finetuned: Optional[Path] = None
    pretrained: Optional[Path] = None
    keep_fraction: float = Field(0.5, ge=0.0, le=1.0)
    methods: List[MethodName] = Field(default_factory=lambda: ["fisher", "squisher", "baseline"])
    sparse_epochs: int = Field(0, ge=0)


class EmbedTarget(_Section):
    checkpoint: Path
    gold: Optional[str] = None


class EmbedSection(_Section):
    sources: Dict[str, Path] = Field(default_factory=dict)
    targets: Dict[str, EmbedTarget] = Field(default_factory=dict)
    methods: List[MethodName] = Field(default_factory=lambda: ["fisher", "squisher", "baseline"])


class EwcSection(_Section):
    lam: float = Field(1.0, ge=0.0)
    methods: List[Literal["fisher", "squisher", "joint", "identity", "baseline"]] = Field(
        default_factory=lambda: ["fisher", "squisher", "baseline"]
    )
    anchor_policy: AnchorPolicy = AnchorPolicy.PER_TASK
    scenario: Scenario = Scenario.TASK
    lambda_grid: List[float] = Field(default_factory=list)
    save_anchors: bool = False


AblationVariant = Literal[
    "fisher", "squisher", "squisher_no_norm", "joint", "beta2", "baseline"
]
_ALL_VARIANTS: List[AblationVariant] = [
    "fisher",
    "squisher",
    "squisher_no_norm",
    "joint",
    "beta2",
    "baseline",
]


class AblateSection(_Section):
    lam: float = Field(1.0, ge=0.0)
    beta2_values: List[float] = Field(default_factory=lambda: [0.95, 0.999])
    variants: List[AblationVariant] = Field(default_factory=lambda: list(_ALL_VARIANTS))

    @field_validator("beta2_values")
    @classmethod
    def _betas(cls, v: List[float]) -> List[float]:
        if any(not 0.0 <= b < 1.0 for b in v):
            raise ValueError("beta2 values must lie in [0, 1)")
        return v


class ExperimentConfig(_Section):
    experiment: str = "default"
    seed: int = 0
    trials: int = Field(1, ge=1)
    output_dir: Path = Path("runs")
    data: GeneratorSpec = Field(default_factory=GeneratorSpec)
    model: ModelConfig = Field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    fisher: FisherSection = Field(default_factory=FisherSection)
    merge: MergeSection = Field(default_factory=MergeSection)
    prune: PruneSection = Field(default_factory=PruneSection)
    mask: MaskSection = Field(default_factory=MaskSection)
    embed: EmbedSection = Field(default_factory=EmbedSection)
    ewc: EwcSection = Field(default_factory=EwcSection)
    ablate: AblateSection = Field(default_factory=AblateSection)

    def resolved(self) -> Dict[str, Any]:
        """The validated config as plain JSON, echoed into the manifest."""
        return self.model_dump(mode="json")

    def checksum(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _parse_value(raw: str) -> Any:
    """Parse an override value as a TOML value, falling back to a bare string."""
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def apply_overrides(tree: MutableMapping[str, Any], overrides: Sequence[str]) -> List[str]:
    """Apply ``dotted.key=value`` overrides in place; return the problems found."""
    problems: List[str] = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            problems.append(f"override '{item}' is not of the form key=value")
            continue
        parts = key.strip().split(".")
        node: MutableMapping[str, Any] = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                problems.append(f"override '{key}': '{part}' is not a table")
                break
            node = child
        else:
            node[parts[-1]] = _parse_value(raw.strip())
    return problems


def _format_errors(exc: ValidationError) -> List[str]:
    return [
        f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
    ]


def load_config(
    path: Optional[Path],
    overrides: Sequence[str] = (),
    *,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
) -> ExperimentConfig:
    """Read, override and validate a config.

    Raises:
        MissingArtifactError: if *path* does not exist.
        ConfigError: listing every syntax, override and validation problem.
    """
    tree: Dict[str, Any] = {}
    if path is not None:
        if not path.is_file():
            raise MissingArtifactError(str(path), "config file")
        try:
            tree = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"{path}: {exc}"]) from exc

    problems = apply_overrides(tree, overrides)
    if seed is not None:
        tree["seed"] = seed
    if output_dir is not None:
        tree["output_dir"] = str(output_dir)
    try:
        config = ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        problems.extend(_format_errors(exc))
        raise ConfigError(problems) from exc
    if problems:
        raise ConfigError(problems)
    return config
