from __future__ import annotations

import errno

import pytest

from src.core.exceptions import (
    ConfigError,
    ContainerFormatError,
    IdxFormatError,
    InputError,
    LayoutError,
    MissingArtifactError,
    NumericError,
    SquisherLabError,
)

pytestmark = pytest.mark.unit


def test_hierarchy_keeps_builtin_bases() -> None:
    assert issubclass(LayoutError, InputError)
    assert issubclass(InputError, ValueError)
    assert issubclass(NumericError, ArithmeticError)
    assert issubclass(MissingArtifactError, FileNotFoundError)
    for cls in (InputError, NumericError, ConfigError, MissingArtifactError):
        assert issubclass(cls, SquisherLabError)


def test_structured_attributes() -> None:
    assert ContainerFormatError("magic", "bad").field == "magic"
    assert IdxFormatError(4, "count mismatch").offset == 4
    assert str(IdxFormatError(4, "count mismatch")) == "offset 4: count mismatch"

    missing = MissingArtifactError("/x/model.sqsh", "checkpoint")
    assert missing.path == "/x/model.sqsh"
    assert missing.what == "checkpoint"
    assert "missing checkpoint" in str(missing)


def test_config_error_joins_every_problem() -> None:
    err = ConfigError(["a: bad", "b: worse"])
    assert err.errors == ["a: bad", "b: worse"]
    assert str(err) == "a: bad; b: worse"
    assert str(ConfigError([])) == "invalid configuration"


def test_missing_artifact_reads_like_a_builtin_file_error() -> None:
    missing = MissingArtifactError("/x/model.sqsh", "checkpoint")

    assert missing.errno == errno.ENOENT
    assert missing.filename == "/x/model.sqsh"
    assert str(missing) == "missing checkpoint: /x/model.sqsh"
    with pytest.raises(FileNotFoundError) as info:
        raise missing
    assert info.value.errno == errno.ENOENT
