"""Deterministic random substreams.

Every independent unit of work (a map cell fit, one rollout) draws from its own
generator derived from the base seed and an integer key path, so results do not
depend on execution order or worker count.
"""

from __future__ import annotations

import os

import numpy as np

SEED_ENV = "CLIFF_LHMP_SEED"


def _zigzag(k: int) -> int:
    k = int(k)
    return 2 * k if k >= 0 else -2 * k - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2**63 - 1), spawn_key=tuple(_zigzag(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def seed_from_env(default: int = 0) -> int:
    value = os.environ.get(SEED_ENV)
    if value is None or value.strip() == "":
        return default
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"{SEED_ENV} must be an integer, got {value!r}") from None
