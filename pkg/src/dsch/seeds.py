"""Deterministic RNG streams.

Every source of randomness in the package draws from a named stream
derived from the single run seed, so that components can be re-run or
tested in isolation without disturbing each other's draws.
"""

import numpy as np

# Stream identifiers. Appending integers (epoch, batch, ...) to the seed
# tuple yields further independent deterministic substreams.
INIT = 0
GMM = 1
KMEANS = 2
SHUFFLE = 3
AUGMENT = 4
SYNTH = 5


def stream(seed: int, name: int, *extra: int) -> np.random.Generator:
    """Return a fresh generator for the named substream of ``seed``."""
    return np.random.default_rng([int(seed), int(name), *[int(e) for e in extra]])
