"""Named random streams derived from one root seed.

Each consumer (data split, shuffling, weight init, dropout, ...) draws from
its own generator, so changing how much one of them consumes never shifts
the others.
"""

import numpy as np

from .errors import ConfigError

STREAMS = {"split": 0, "shuffle": 1, "init": 2, "dropout": 3, "replicate": 4, "subsample": 5, "probe": 6}


def stream(seed: int, name: str) -> np.random.Generator:
    if name not in STREAMS:
        raise ConfigError(f"unknown random stream {name!r}; known: {sorted(STREAMS)}")
    return np.random.default_rng([int(seed), STREAMS[name]])
