"""Seed derivation and small shared helpers.

All randomness in a run flows from one integer seed; subsystem generators
are derived by hashing (seed, subsystem name) with SHA-256, so each
subsystem sees a stable, platform-independent stream.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np

from .errors import ConfigError

THREADS_ENV = "MININET_THREADS"


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}/{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, name))


def thread_cap() -> int:
    """Parallelism cap from the environment; 0 means sequential reference
    mode. Execution is bit-identical at every setting."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 0
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0, got {value}")
    return value
