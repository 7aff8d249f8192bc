"""Named deterministic random streams.

Each stochastic process (arrivals, bus headways, dwell draws, exploration)
gets its own generator, so consuming one stream never perturbs another and
replicate runs differ only through the base seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _stream_seed(base_seed: int, name: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(name.encode()).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.SeedSequence(entropy=base_seed, spawn_key=(key,))


class RngStreams:
    """Lazy registry of named, independently seeded generators."""

    def __init__(self, base_seed: int):
        self.base_seed = int(base_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            gen = np.random.Generator(np.random.PCG64(_stream_seed(self.base_seed, name)))
            self._streams[name] = gen
        return gen

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.get(name)
