"""Named, seedable random streams.

Every stochastic choice draws from its own stream so that adding a draw in
one place never perturbs another (entry shuffles stay fixed when the
initialization changes, and so on).
"""
import zlib

import numpy as np


def stream(seed, name, *extra):
    """Return an independent ``numpy.random.Generator`` for ``(seed, name, *extra)``."""
    key = [zlib.crc32(name.encode())] + [int(x) for x in extra]
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))
