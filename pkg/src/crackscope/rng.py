"""Deterministic random streams built on splitmix64.

Every random draw in the package goes through :class:`SplitMix64` so that a
given seed reproduces the same bytes on every platform. The generator state is
a plain counter, which lets blocks of draws be produced with vectorised numpy
arithmetic (uint64 wraps modulo 2**64 exactly like the scalar version).
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


class SplitMix64:
    """splitmix64 stream (Steele, Lea & Flood).

    ``next_u64`` advances the state by the golden gamma and returns the mixed
    state; the array helpers produce exactly the same sequence as repeated
    scalar calls.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return _mix64_array(states)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def below(self, n: int) -> int:
        """Integer in [0, n). Multiply-shift mapping; bias < n / 2**64."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def normal_array(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller, consuming 2 * ceil(n / 2) draws."""
        m = (n + 1) // 2
        u1 = self.uniform_array(m)
        u2 = self.uniform_array(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 lies in (0, 1]
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) (stable argsort of u64 keys)."""
        return np.argsort(self.u64_array(n), kind="stable")

    def spawn(self) -> "SplitMix64":
        return SplitMix64(self.next_u64())


def sub_seed(seed: int, *path: int) -> int:
    """Derive a child seed from ``seed`` and an integer path, order-free of callers."""
    s = int(seed) & MASK64
    for p in path:
        s = mix64((s + (int(p) + 1) * GOLDEN_GAMMA) & MASK64)
    return s
