"""Portable seeded shuffling for corpus splits.

Splits must be reproducible by other implementations, so the generator is
pinned exactly rather than borrowed from numpy:

* state seeding: four successive outputs of SplitMix64 started at ``seed``
  (mod 2**64);
* generator: xoshiro256** (Blackman & Vigna), returning 64-bit words;
* bounded draw ``below(n)``: draw ``r``, reject while ``r < 2**64 % n``,
  return ``r % n`` (unbiased);
* shuffle: Fisher-Yates from the last index down, swapping ``i`` with
  ``below(i + 1)``.
"""
from __future__ import annotations

from typing import List, MutableSequence, TypeVar

T = TypeVar("T")

MASK64 = (1 << 64) - 1


def splitmix64(state: int):
    """Yield SplitMix64 outputs starting from ``state``."""
    state &= MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** seeded through SplitMix64."""

    def __init__(self, seed: int):
        sm = splitmix64(seed)
        self.s = [next(sm) for _ in range(4)]

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (1 << 64) % n
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % n

    def shuffle(self, items: MutableSequence[T]) -> MutableSequence[T]:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def permutation(self, n: int) -> List[int]:
        return list(self.shuffle(list(range(n))))
