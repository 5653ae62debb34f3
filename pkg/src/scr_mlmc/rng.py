"""Counter-based random streams.

Every (seed, level, scenario) triple maps to its own Philox stream, so a
scenario's draws do not depend on how many scenarios are evaluated, in which
order, or by how many workers. Inner draw ``k`` of a scenario is simply the
``k``-th block consumed from that scenario's stream.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=4096)
def _key(seed: int, level: int) -> tuple[int, int]:
    state = np.random.SeedSequence(seed, spawn_key=(level,)).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def stream(seed: int, level: int, scenario: int) -> np.random.Generator:
    """Generator owning the draws of one scenario at one level."""
    if seed < 0 or level < 0 or scenario < 0:
        raise ValueError("seed, level and scenario must be non-negative")
    bitgen = np.random.Philox(key=list(_key(seed, level)), counter=[0, 0, scenario, 0])
    return np.random.Generator(bitgen)


def streams(seed: int, level: int, start: int, stop: int) -> list[np.random.Generator]:
    return [stream(seed, level, j) for j in range(start, stop)]


def derive_seed(seed: int, *labels: int) -> int:
    """Child seed for a labelled sub-experiment (macro-replication, bump, ...)."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(labels)).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])
