"""Randomness source: OS entropy by default, seeded stream for simulations.

Every operation that draws randomness takes a RandomSource so that
scenario runs are reproducible from a single seed.
"""

import random as _random
import secrets


class RandomSource:
    """Uniform byte/integer source. seed=None uses os-level entropy."""

    def __init__(self, seed: int | bytes | None = None):
        self.seed = seed
        self._rng = _random.Random(seed) if seed is not None else None

    def bytes(self, n: int) -> bytes:
        if self._rng is not None:
            return self._rng.randbytes(n)
        return secrets.token_bytes(n)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        if self._rng is not None:
            return self._rng.randrange(n)
        return secrets.randbelow(n)


DEFAULT = RandomSource()
