"""Reproducible random streams for instance generation.

The stream is Philox4x64-10 (a counter-based generator) with key ``(seed, 0)``
and counter starting at zero, as implemented by ``numpy.random.Philox``.  Only
the raw 64-bit words are consumed; the conversions below are spelled out so
that another implementation can reproduce instances bit for bit:

* ``uniform()``     -> ``(w >> 11) * 2**-53``
* ``below(n)``      -> ``w % n`` (n is tiny compared to 2**64, bias is negligible)
* ``uniform(a, b)`` -> ``a + (b - a) * uniform()``
"""
import numpy as np

_TWO53 = float(2 ** 53)


class Stream:
    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self._bg = np.random.Philox(key=seed % (1 << 64))

    def word(self) -> int:
        return int(self._bg.random_raw())

    def uniform(self, a=0.0, b=1.0) -> float:
        u = (self.word() >> 11) / _TWO53
        return a + (b - a) * u

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        return self.word() % n

    def choice_sign(self) -> int:
        return 1 if self.word() & 1 else -1
