"""Deterministic pseudo-random generator used everywhere randomness is needed.

The algorithm is pinned so that identical seeds reproduce identical streams
across platforms and Python versions: a xoshiro256** core whose 256-bit state
is expanded from a 64-bit seed (plus optional stream labels) with splitmix64.
Python's own `random` and numpy's default generators are deliberately not
used for anything that affects artifacts.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** generator seeded via splitmix64.

    ``Rng(seed, a, b, ...)`` derives an independent stream for each distinct
    tuple of integer labels, so per-sample generators can be built as
    ``Rng(dataset_seed, sample_index)`` without correlated sequences.
    """

    def __init__(self, seed: int, *streams: int):
        state = seed & _MASK64
        for label in streams:
            # full scramble per label so nearby labels decorrelate
            state, out = _splitmix64(state ^ (label & _MASK64))
            state = out
        s = []
        for _ in range(4):
            state, out = _splitmix64(state)
            s.append(out)
        if not any(s):
            s[0] = 1  # xoshiro state must not be all zero
        self._s = s
        self._spare_normal: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """Uniform float in [lo, hi) built from the top 53 bits."""
        u = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return lo + (hi - lo) * u

    def log_uniform(self, lo: float, hi: float) -> float:
        return math.exp(self.uniform(math.log(lo), math.log(hi)))

    def randint(self, n: int) -> int:
        """Integer in [0, n) via multiply-shift on 53 random bits."""
        if n <= 0:
            raise ValueError("randint requires n >= 1")
        return ((self.next_u64() >> 11) * n) >> 53

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def chance(self, p: float) -> bool:
        return self.uniform() < p

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        """Box-Muller transform; caches the second variate."""
        if self._spare_normal is not None:
            z = self._spare_normal
            self._spare_normal = None
        else:
            while True:
                u1 = self.uniform()
                if u1 > 0.0:
                    break
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(u1))
            z = r * math.cos(2.0 * math.pi * u2)
            self._spare_normal = r * math.sin(2.0 * math.pi * u2)
        return mean + std * z

    def trunc_normal(self, std: float, limit: float = 2.0) -> float:
        """Normal(0, std) rejected outside +-limit standard deviations."""
        while True:
            z = self.normal()
            if abs(z) <= limit:
                return z * std
