"""Seeded random streams for reproducible slot simulations."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np


class SeededRNG:
    """numpy Generator bound to a SeedSequence so independent child streams can be spawned"""

    def __init__(self, seed: int, sequence: Optional[np.random.SeedSequence] = None):
        self._seed = seed
        self._sequence = sequence if sequence is not None else np.random.SeedSequence(seed)
        self._gen = np.random.default_rng(self._sequence)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def streams(self, count: int) -> List[SeededRNG]:
        """Child RNGs on independent spawned streams"""
        return [SeededRNG(self._seed, child) for child in self._sequence.spawn(count)]

    def states(self, probs: Sequence[float], size: int) -> np.ndarray:
        """Draw 1-based state indices with the given probabilities"""
        p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
        return self._gen.choice(len(p), size=size, p=p / p.sum()).astype(np.int8) + 1

    def uniform(self, size: int) -> np.ndarray:
        return self._gen.random(size)

    def binomial(self, n: int, p: float, size: int) -> np.ndarray:
        return self._gen.binomial(n, p, size)
