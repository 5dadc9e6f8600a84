"""Seeded, splittable random streams.

Every independent piece of Monte-Carlo work draws from its own generator,
derived from the master seed and a tuple of integer keys::

    stream(seed, STREAM_SCATTER)          # radio-map scatter draws
    stream(seed, STREAM_PING, bs, k)      # BS-selection pings at grid index k

The derivation goes through :class:`numpy.random.SeedSequence`, so streams
for different keys are statistically independent and the result does not
depend on the order (or the process) in which they are created.
"""
from __future__ import annotations

import numpy as np

STREAM_SCATTER = 1
STREAM_PING = 2
STREAM_SAMPLE = 3
STREAM_CDF = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))
