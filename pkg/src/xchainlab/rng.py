"""Counter-based 64-bit PRNG shared by the contract runtime and simlab.

SplitMix64 with the reference constants:

    GAMMA = 0x9E3779B97F4A7C15        (stream increment)
    MIX1  = 0xBF58476D1CE4E5B9        (first finalizer multiplier)
    MIX2  = 0x94D049BB133111EB        (second finalizer multiplier)

Output j (0-based) of a stream seeded with s is
``finalize(s + (j + 1) * GAMMA) mod 2**64``, so streams can be sampled
out of order and derived child seeds (`mix`) are one finalize call.
Any implementation with these constants reproduces the streams exactly.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_INV_2_53 = 2.0**-53


def finalize(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def mix(seed: int, index: int) -> int:
    """Child seed `index` of `seed`; equals output `index` of the stream."""
    return finalize(seed + (index + 1) * GAMMA)


class SplitMix64:
    """Sequential view over one SplitMix64 stream."""

    __slots__ = ("_state",)

    def __init__(self, seed: int) -> None:
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & MASK64
        return finalize(self._state)

    def random(self) -> float:
        """Uniform float in the half-open interval (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * _INV_2_53
