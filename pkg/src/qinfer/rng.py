"""Random streams.

Every random draw in the package comes from a Philox (counter-based)
``numpy.random.Generator``. A stream is identified by ``(seed, *keys)``:
``make_rng(7, 3)`` is replication 3 of base seed 7 and is independent of
``make_rng(7, 4)`` no matter which worker runs it or in what order.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed, *keys: int) -> np.random.Generator:
    """Return a generator for stream ``keys`` of ``seed``.

    ``seed`` may already be a Generator (returned unchanged when no keys are
    given), a SeedSequence, or a tuple ``(seed, *keys)``.
    """
    if isinstance(seed, tuple):
        return make_rng(seed[0], *seed[1:], *keys)
    if isinstance(seed, np.random.Generator):
        if keys:
            raise TypeError("cannot derive a keyed stream from a live Generator")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(keys))
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
