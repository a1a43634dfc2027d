"""Portable seeded random streams.

Every stochastic step in the harness (feature dropout, query noise, random
negatives, train/validation splits, weight initialisation) draws from a
SplitMix64 stream keyed by ``(seed, *parts)``.  SplitMix64 is fully specified
by a handful of 64-bit integer operations, so a given key produces the same
numbers in any language and on any platform.  The OS entropy pool is never
consulted.

Stream derivation::

    state = seed
    for part in parts:
        state = mix64(state ^ mix64(encode(part) + GOLDEN))

where ``encode`` maps an int to itself (mod 2**64) and a string to the first
8 bytes (little endian) of its BLAKE2b digest.
"""

from __future__ import annotations

import hashlib

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _encode(part: int | str) -> int:
    if isinstance(part, bool):
        part = int(part)
    if isinstance(part, int):
        return part & MASK64
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError(f"stream key parts must be int or str, got {type(part).__name__}")


def derive_seed(seed: int, *parts: int | str) -> int:
    state = seed & MASK64
    for part in parts:
        state = mix64(state ^ mix64((_encode(part) + GOLDEN) & MASK64))
    return state


class SplitMix64:
    """Counter-based 64-bit generator (Steele, Lea & Flood 2014)."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    @classmethod
    def stream(cls, seed: int, *parts: int | str) -> "SplitMix64":
        return cls(derive_seed(seed, *parts))

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased (modulo with rejection of the short tail)."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (1 << 64) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]
