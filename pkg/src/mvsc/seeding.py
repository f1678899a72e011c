"""Counter-based seed splitting.

Every randomized stage draws from ``SeedSequence(run_seed, spawn_key=(stage, ...))``
so adding a stage never shifts another stage's stream.
"""

from __future__ import annotations

import numpy as np

DATA = 0
TEXT = 1
MODEL = 2
EXTRACTOR = 3
SHUFFLE = 4
HEAD = 5
TEXT_DIRECTIONS = 6


def stage_rng(seed: int, stage: int, *counters: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stage), *map(int, counters)))
    return np.random.default_rng(seq)


def derive(seed: int, stage: int, *counters: int) -> int:
    """A 32-bit child seed for APIs that take a plain integer."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stage), *map(int, counters)))
    return int(seq.generate_state(1)[0])
