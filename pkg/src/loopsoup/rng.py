"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(master seed, *keys)`` through
``SeedSequence`` spawn keys, so any replica or length class can be re-drawn
in isolation and results do not depend on how replicas are scheduled.
"""
from __future__ import annotations

import numpy as np

STREAM_DOC = ("numpy Philox bit generator seeded by SeedSequence(master_seed, "
              "spawn_key=(purpose, replica, sub-stream))")


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# purpose tags keep unrelated draws on disjoint streams
TRUNCATED = 1
WINDOW = 2
PROBE = 3
ARRIVALS = 4
