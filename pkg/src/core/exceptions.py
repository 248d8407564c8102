from __future__ import annotations

import errno
from typing import Sequence

__all__: list[str] = [
    "SquisherLabError",
    "InputError",
    "LayoutError",
    "NumericError",
    "AccumulatorUnavailableError",
    "CapacityError",
    "ContainerFormatError",
    "IdxFormatError",
    "ConfigError",
    "MissingArtifactError",
]


class SquisherLabError(Exception):
    """Root of every domain error raised by the lab.

    The CLI converts anything deriving from this class into a JSON error
    envelope and a specific exit code; anything else is logged with its
    traceback and reported as ``internal_error``.
    """


class InputError(SquisherLabError, ValueError):
    """Raised for invalid arguments: empty data, out-of-range ``k``, bad labels."""


class LayoutError(InputError):
    """Raised when shapes, parameter-group layouts or scaling conventions disagree."""


class NumericError(SquisherLabError, ArithmeticError):
    """Raised when a NaN or Inf reaches an operation that requires finite input."""


class AccumulatorUnavailableError(SquisherLabError):
    """Raised when a squared-gradient accumulator is requested but none exists.

    Plain SGD keeps no second moment, and an Adam state at ``t == 0`` has not
    seen a single gradient yet.
    """


class CapacityError(SquisherLabError):
    """Raised when an exact enumeration would exceed the configured capacity."""


class ContainerFormatError(SquisherLabError):
    """Raised when a binary container cannot be decoded.

    Attributes:
        field: Name of the header field or payload section that failed.
    """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class IdxFormatError(SquisherLabError):
    """Raised for malformed IDX files.

    Attributes:
        offset: Byte offset at which decoding failed.
    """

    def __init__(self, offset: int, message: str) -> None:
        super().__init__(f"offset {offset}: {message}")
        self.offset = offset


class ConfigError(SquisherLabError):
    """Raised when an experiment configuration fails validation.

    Carries every problem found so the CLI can list them all at once.
    """

    def __init__(self, errors: Sequence[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) or "invalid configuration")


class MissingArtifactError(SquisherLabError, FileNotFoundError):
    """Raised when a required checkpoint, Fisher or mask file does not exist.

    Carries ``errno.ENOENT`` and the path as ``filename`` like the builtin
    does, but renders as the plain message.
    """

    def __init__(self, path: str, what: str = "artifact") -> None:
        self.message = f"missing {what}: {path}"
        super().__init__(errno.ENOENT, self.message, path)
        self.path = path
        self.what = what

    def __str__(self) -> str:
        return self.message
