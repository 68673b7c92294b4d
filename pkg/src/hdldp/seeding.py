"""Deterministic RNG substreams.

Every random draw in the package goes through a PCG64 generator derived
from a 64-bit seed plus a tuple of integer keys (column index, trial index,
...), so results do not depend on execution order or parallelism.
"""

import numpy as np

MAX_SEED = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        from .errors import ConfigError

        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed, *keys):
    """Return an independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng):
    """Accept a Generator, an integer seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return substream(rng)
