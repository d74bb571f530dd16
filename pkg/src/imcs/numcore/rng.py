"""Seeded, splittable random streams.

Each stream is a Philox counter-based generator keyed by
``SeedSequence(master_seed, spawn_key=(stream_index,))``.  Normal variates
come from numpy's ziggurat sampler, so a (master_seed, stream_index) pair
reproduces the same sequence bit-for-bit on a given platform.
"""
from __future__ import annotations

import hashlib

import numpy as np


class RngStream:
    def __init__(self, master_seed: int, stream_index: int = 0):
        if master_seed < 0 or stream_index < 0:
            raise ValueError("seed and stream index must be non-negative")
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_index = int(stream_index)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=(self.stream_index,))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"

    def child(self, *labels) -> "RngStream":
        """Independent stream derived from this one's seed and ``labels``."""
        return RngStream(self.master_seed, stream_id(self.stream_index, *labels))

    def gaussian(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return gaussian(self, shape, mean, std)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)


def gaussian(rng: RngStream, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    return mean + std * rng.generator.standard_normal(shape)


def stream_id(*labels) -> int:
    """Stable 63-bit integer for a tuple of labels (independent of PYTHONHASHSEED)."""
    text = "\x1f".join(repr(x) for x in labels).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little") >> 1
