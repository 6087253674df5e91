"""Seeded random sources with independent replicate streams."""

from __future__ import annotations

import numpy as np


class RandomSource:
    """A reproducible random stream identified by (seed, stream).

    The same (seed, stream) pair always yields the bit-identical variate
    sequence; distinct streams are statistically independent, so parallel
    Monte Carlo assigns one stream per replicate.
    """

    __slots__ = ("seed", "stream", "generator")

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be nonnegative integers")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream={self.stream})"

    def replicate_sources(self, n: int) -> list["RandomSource"]:
        """One independent source per replicate: streams derived from this one."""
        base = (self.stream + 1) * 1_000_003
        return [RandomSource(self.seed, base + i) for i in range(n)]
