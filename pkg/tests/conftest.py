# ruff: noqa: E402
from __future__ import annotations

import sys
from pathlib import Path

# Ensure repository root is first on sys.path
_repo_root: Path = Path(__file__).resolve().parent.parent  # tests/ -> repo root
if str(_repo_root) not in sys.path:
    sys.path.insert(0, str(_repo_root))

from typing import Any

import pytest

from src.core.rng import derive_rng
from src.data.streams import GeneratorSpec, Task, generate
from src.nn.mlp import Activation, MlpSpec, init_params
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint
from src.optim.training import TrainSettings
from tests.helpers import make_checkpoint


class MockSettings:  # Does NOT inherit from real Settings
    """Plain stand-in for :class:`src.core.config.Settings`."""

    debug: bool = False
    threads: int = 1
    output_dir: Path = Path("runs")
    oracle_capacity: int = 1_000_000
    merge_epsilon: float = 1e-10
    embed_epsilon: float = 1e-12

    def __init__(self, **kwargs: Any) -> None:
        for key, value in self.__class__.__dict__.items():
            if not key.startswith("__") and not callable(value):
                setattr(self, key, value)
        for key, value in kwargs.items():
            setattr(self, key, value)

    def worker_count(self, requested: int | None = None) -> int:
        if requested is None:
            return self.threads
        return max(1, min(requested, self.threads))


@pytest.fixture
def mock_settings() -> MockSettings:
    return MockSettings()


@pytest.fixture(autouse=True)
def _disable_dotenv(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep the developer's ``.env`` and ``SQUISHER_LAB_*`` variables out of every test."""

    from src.core.config import Settings  # Imported here to avoid circularity

    monkeypatch.setitem(Settings.model_config, "env_file", None)
    for name in (
        "SQUISHER_LAB_DEBUG",
        "SQUISHER_LAB_THREADS",
        "SQUISHER_LAB_OUTPUT_DIR",
        "SQUISHER_LAB_ORACLE_CAPACITY",
        "SQUISHER_LAB_MERGE_EPSILON",
        "SQUISHER_LAB_EMBED_EPSILON",
    ):
        monkeypatch.delenv(name, raising=False)


# ---------------------------------------------------------------------------
# Small models and data
# ---------------------------------------------------------------------------


@pytest.fixture
def tiny_spec() -> MlpSpec:
    """[4-8-3] tanh classifier; smooth everywhere, so finite differences behave."""
    return MlpSpec((4, 8, 3), Activation.TANH)


@pytest.fixture
def tiny_params(tiny_spec: MlpSpec) -> ParamVector:
    return init_params(tiny_spec, derive_rng(7, "tests", "params"))


@pytest.fixture
def logistic_spec() -> MlpSpec:
    """Two inputs, two classes, no hidden layer: 6 parameters."""
    return MlpSpec((2, 2), Activation.TANH)


@pytest.fixture
def logistic_params(logistic_spec: MlpSpec) -> ParamVector:
    return init_params(logistic_spec, derive_rng(3, "tests", "logistic"))


@pytest.fixture
def blob_spec() -> GeneratorSpec:
    return GeneratorSpec(dims=4, classes=3, samples_per_class=20, test_samples_per_class=10, seed=5)


@pytest.fixture
def blob_task(blob_spec: GeneratorSpec) -> Task:
    return generate(blob_spec)[0]


@pytest.fixture
def trained_checkpoint(blob_spec: GeneratorSpec, blob_task: Task) -> Checkpoint:
    """Adam-trained classifier on the first blob task, with its data spec in provenance."""
    spec = MlpSpec((blob_task.dims, 8, blob_task.num_classes))
    settings = TrainSettings(lr=0.05, batch_size=10, epochs=10)
    return make_checkpoint(spec, blob_task, settings, data=blob_spec.model_dump(mode="json"))
