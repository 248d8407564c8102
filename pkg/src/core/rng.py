"""
Counter-based random streams.

Every random draw in the lab comes from a generator derived from the run
seed plus a *path* naming who consumes it, e.g. ``(seed, "data", 3, "test")``.
Streams are keyed Philox counters, so two different paths never share state
and appending a new task leaves the streams of earlier tasks untouched.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

__all__: list[str] = ["derive_rng", "path_key"]

PathPart = Union[str, int]


def path_key(seed: int, *path: PathPart) -> int:
    """Return a stable 128-bit integer key for *seed* and *path*.

    ``hash()`` is salted per process, so a cryptographic digest of the
    textual path is used instead.
    """
    text = "/".join([str(int(seed)), *(str(p) for p in path)])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def derive_rng(seed: int, *path: PathPart) -> np.random.Generator:
    """Return a Philox-backed generator private to ``(seed, *path)``."""
    return np.random.Generator(np.random.Philox(key=path_key(seed, *path)))
