"""Counter-based random streams.

Every stream is a Philox generator keyed by the user seed and a tuple of
integer task coordinates, so results do not depend on how tasks are
distributed over workers.
"""

import numpy as np


def stream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    if seed is None:
        raise ValueError("a seed is required for stochastic computations")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.Philox(ss))


def child(rng, *key):
    """Derive a sub-stream from an existing generator deterministically."""
    base = int(rng.integers(0, 2**63 - 1))
    return stream(base, *key)


def as_generator(rng):
    """Accept a Generator, an integer seed or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return stream(rng)
