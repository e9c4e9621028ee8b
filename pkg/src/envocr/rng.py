"""SplitMix64 generator shared by every stochastic step.

Scalar draws go through :class:`Rng`; bulk draws (per-pixel noise) use the
vectorized helpers, which produce exactly the same stream.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int) -> int:
    """First output of a SplitMix64 stream seeded with ``seed``."""
    return mix64((seed + GOLDEN_GAMMA) & MASK64)


class Rng:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def u64_array(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs as uint64, advancing the state."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return z

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def gaussian_array(self, n: int) -> np.ndarray:
        """``n`` standard normals; uniform pair k yields outputs 2k (cos) and 2k+1 (sin)."""
        pairs = (n + 1) // 2
        u = self.uniform_array(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]
