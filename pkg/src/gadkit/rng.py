"""Deterministic splitmix-style 64-bit RNG.

Everything stochastic in the toolkit (parameter init, synthetic scenes,
frame sampling, k-means seeding, shuffles) draws from this generator so
that a seed pins down the full run.  Python's and numpy's global
generators are never used for anything that feeds the reproducibility
contract.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """splitmix64 stream with float, normal, integer, and shuffle helpers."""

    def __init__(self, seed: int):
        self.state = seed & _MASK
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def split(self) -> "SplitMix64":
        """Independent child stream, e.g. one per clip or per epoch."""
        return SplitMix64(self.next_u64())

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller with a cached spare draw.
        if self._spare_normal is not None:
            z, self._spare_normal = self._spare_normal, None
        else:
            u1 = self.uniform()
            while u1 <= 0.0:
                u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return mu + sigma * z

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled to avoid modulo bias."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        threshold = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice_weighted(self, weights) -> int:
        """Index drawn proportionally to nonnegative weights."""
        total = float(sum(weights))
        if total <= 0.0:
            raise ValueError("weights must have positive sum")
        r = self.uniform(0.0, total)
        acc = 0.0
        for i, w in enumerate(weights):
            acc += float(w)
            if r < acc:
                return i
        return len(weights) - 1

    def normals(self, shape) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.normal()
        return out.reshape(shape)

    def uniforms(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.uniform(lo, hi)
        return out.reshape(shape)
