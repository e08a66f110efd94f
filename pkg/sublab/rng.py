"""Platform-independent generators and named seed streams.

All randomness in a run flows from one master seed. Each consumer (corpus,
teacher init, student init, shuffling, probe folds, bootstrap, ...) draws from
its own stream, derived from the master seed and the stream name, so two runs
that share a stream see identical draws regardless of what the other streams do.
"""

import numpy as np

from sublab.exceptions import InputDomainError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(n: int) -> int:
    """First SplitMix64 output for state ``n``: ``mix(n + gamma)``."""
    if n < 0:
        raise InputDomainError(f"hash64 expects a non-negative integer, got {n}")
    return _mix64((n + GOLDEN_GAMMA) & MASK64)


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN_GAMMA) & MASK64
        return _mix64(self._state)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** seeded through SplitMix64."""

    def __init__(self, seed: int) -> None:
        seeder = SplitMix64(seed)
        self._s = [seeder.next_u64() for _ in range(4)]

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise InputDomainError("randbelow expects n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


def _fnv1a64(name: str) -> int:
    h = _FNV_OFFSET
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(master: int, name: str) -> int:
    """Seed of the stream ``name`` under ``master``."""
    return hash64((master & MASK64) ^ _fnv1a64(name))


def numpy_generator(seed: int) -> np.random.Generator:
    """Array-valued draws: PCG64 is bit-stable across platforms for a numpy version."""
    return np.random.Generator(np.random.PCG64(seed & MASK64))
