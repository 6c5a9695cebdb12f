"""
Seeded random number generation.

All randomness (weight init, dropout masks, batch order, synthetic corpora)
flows through ``Rng``, a thin wrapper over numpy's PCG64 bit generator. The
same seed yields the same draw sequence on every platform; child streams are
derived with ``SeedSequence`` spawn keys so per-writer and per-item draws stay
independent of the order in which they are requested.
"""

from typing import Sequence, Tuple

import numpy as np


class Rng:
    """Deterministic generator keyed by an integer seed and an optional path of sub-keys."""

    def __init__(self, seed: int, key: Sequence[int] = ()):
        self.seed = int(seed)
        self.key: Tuple[int, ...] = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *key: int) -> 'Rng':
        """Independent child stream addressed by ``key`` below this one."""
        return Rng(self.seed, self.key + tuple(key))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._generator.normal(loc, scale, size)

    def integers(self, low: int, high: int = None, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, values, size=None, replace: bool = True):
        return self._generator.choice(values, size=size, replace=replace)

    def bernoulli_mask(self, keep_probability: float, shape) -> np.ndarray:
        return self._generator.random(shape) < keep_probability

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"
