"""Seeded PRNG used for every random decision in the pipeline.

The generator is SplitMix64 (Steele, Lea and Flood's mixer, the same
constants as Java's SplittableRandom): state advances by the golden-ratio
increment 0x9E3779B97F4A7C15 and each output is finalized with the
0xBF58476D1CE4E5B9 / 0x94D049BB133111EB multiply-xorshift rounds.  All
derived quantities (bounded ints, uniforms, normals, shuffles) are defined
on top of `next_u64` exactly as documented below, so any implementation of
SplitMix64 reproduces every stream bit for bit:

  randint(n)   -> next_u64() % n            (modulo; bias < n / 2**64)
  uniform()    -> (next_u64() >> 11) * 2**-53          in [0, 1)
  normal()     -> Box-Muller cosine branch from two uniforms,
                  sqrt(-2 ln(1-u1)) * cos(2 pi u2); the sine mate is
                  discarded (no cached spare)
  shuffle(xs)  -> Fisher-Yates, i = len-1 .. 1, j = randint(i+1), swap

Independent streams are split off a master seed by name:
`derive_seed(master, *parts)` hashes "/".join(parts) with 64-bit FNV-1a,
XORs the digest into the master seed, and returns one SplitMix64 output of
that value.  The part strings used by training are documented where the
streams are created.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_BASIS
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, *parts) -> int:
    """Derive a named child seed from a master seed.

    Parts are joined with "/" after str(); the same (master, parts)
    always yields the same child seed.
    """
    label = "/".join(str(p) for p in parts)
    return _mix(master & _MASK64 ^ fnv1a64(label.encode("utf-8")))


def _mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic 64-bit generator; one instance per stream."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n). Modulo bounding; bias < n / 2**64."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return self.next_u64() % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two uniforms."""
        u1 = self.uniform()
        u2 = self.uniform()
        # 1-u1 is in (0, 1], so the log argument never hits zero.
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def trunc_normal(self, sigma: float) -> float:
        """Normal truncated to two standard deviations, then scaled by sigma."""
        while True:
            z = self.normal()
            if abs(z) <= 2.0:
                return z * sigma

    def shuffle(self, xs: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(xs) - 1, 0, -1):
            j = self.randint(i + 1)
            xs[i], xs[j] = xs[j], xs[i]

    def permutation(self, n: int) -> list[int]:
        xs = list(range(n))
        self.shuffle(xs)
        return xs
