"""Counter-based random streams.

All stochastic work (initialisation, dropout, reparameterisation noise,
shuffling) draws from Philox generators keyed by ``(seed, stream name)``.
Two runs that ask for the same stream names with the same seed see the same
numbers no matter in which order the streams are first requested.
"""

import zlib

import numpy as np


def make_rng(seed, stream=None):
    key = [int(seed)]
    if stream is not None:
        key.append(zlib.crc32(stream.encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def split(rng, n):
    """Independent child generators of ``rng``."""
    return rng.spawn(n)


class Streams:
    """Lazily created named generators sharing one seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._streams = {}

    def __call__(self, name):
        if name not in self._streams:
            self._streams[name] = make_rng(self.seed, name)
        return self._streams[name]
