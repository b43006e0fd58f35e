"""Deterministic RNG derivation.

Every stochastic choice in the pipeline is a pure function of
(seed, purpose tag, extra ints), so "RNG state" in checkpoints reduces
to the seed plus the epoch counter.
"""

from __future__ import annotations

import numpy as np

# purpose tags; part of the reproducibility contract
TAG_DATA = 1
TAG_SPLIT = 2
TAG_BATCH = 3
TAG_INIT = 4


def rng_for(seed: int, *tags: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, tags)])))
