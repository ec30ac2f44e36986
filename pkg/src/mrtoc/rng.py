"""Named, independently seeded random streams.

Every consumer of randomness (weight init, codeword init, shuffling, channel
noise, evaluation) gets its own stream derived from the run seed and a
stream name, so changing how much one consumer draws never shifts another.
"""

import zlib

import numpy as np


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


def stream(seed, name, *keys):
    """Return a ``numpy.random.Generator`` for ``(seed, name, *keys)``.

    Keys must be non-negative integers. The mapping is stable across runs
    and platforms (PCG64 over a SeedSequence entropy pool).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, _name_key(name)]
    entropy.extend(int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
