"""Counter-based randomness: every draw is a pure function of (seed, step, purpose, index)."""

from __future__ import annotations

import numpy as np

LABEL = 0
INIT = 1
DETECTOR = 2

_MASK64 = (1 << 64) - 1


class CounterRng:
    """Philox4x64 keyed by a 64-bit seed.

    ``block(step, purpose, size)`` returns the same uniforms no matter in which
    order steps are requested, so runs can be replayed or split freely.
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int):
        if not 0 <= seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")
        self.seed = seed
        self.position = 0

    def block(self, step: int, purpose: int, size: int) -> np.ndarray:
        bg = np.random.Philox(key=self.seed, counter=[0, step & _MASK64, purpose, 0])
        self.position = step
        return np.random.Generator(bg).random(size)

    def __repr__(self):
        return f"CounterRng(seed={self.seed})"
