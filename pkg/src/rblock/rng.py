"""Deterministic, splittable random streams built on the Philox counter-based
bit generator.

A stream is addressed by (seed, stream_id): equal pairs replay the identical
draw sequence on every platform, and distinct stream_ids give statistically
independent sequences.  Substreams are derived arithmetically so mask
sampling, data shuffling and Monte Carlo workers never share a stream.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


class RngStream:
    """A single-owner random stream; do not share one instance across threads."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, index: int) -> "RngStream":
        """Derive an independent child stream; (parent, index) pairs map to
        distinct stream_ids."""
        child = (self.stream_id * _GOLDEN + int(index) + 1) & _MASK64
        return RngStream(self.seed, child)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def bernoulli_sample(rng: RngStream, shape, prob_one: float) -> np.ndarray:
    """Binary float64 tensor whose entries are independently 1 w.p. prob_one."""
    if not 0.0 <= prob_one <= 1.0:
        raise ValueError(f"prob_one must lie in [0, 1], got {prob_one}")
    if prob_one == 0.0:
        return np.zeros(shape, dtype=np.float64)
    if prob_one == 1.0:
        return np.ones(shape, dtype=np.float64)
    return (rng.random(shape) < prob_one).astype(np.float64)
