"""Deterministic random number generation for the augmentation pipeline.

Augmentation draws come from PCG32 streams, one stream per (seed, epoch,
image) triple, so images can be augmented in any order (or in parallel)
without changing the values each image receives.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer; maps any 64-bit value to another."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into a single 64-bit seed via chained splitmix64 rounds."""
    acc = 0x243F6A8885A308D3  # arbitrary nonzero start
    for p in parts:
        acc = splitmix64(acc ^ (p & _MASK64))
    return acc


class Pcg32:
    """Minimal PCG32 (XSH-RR output, 64-bit LCG state).

    Follows the reference generator: ``seed`` selects the starting point,
    ``stream`` the increment sequence. Identical (seed, stream) pairs yield
    identical output sequences.
    """

    def __init__(self, seed: int, stream: int = 0):
        self._inc = (((stream & _MASK64) << 1) | 1) & _MASK64
        self._state = 0
        self.next_u32()
        self._state = (self._state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self._state
        self._state = (old * _PCG_MULT + self._inc) & _MASK64
        xorshifted = ((old >> 18) ^ old) >> 27 & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & 0xFFFFFFFF

    def uniform(self, low: float, high: float) -> float:
        """Uniform draw in [low, high); never exceeds the closed range."""
        return low + (high - low) * (self.next_u32() * 2.0**-32)
