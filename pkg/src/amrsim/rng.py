"""Portable deterministic random numbers for reproducible simulations.

Two primitives, both specified exactly in docs/rng.md so that any other
implementation (any language) reproduces the same event logs:

* ``SplitMix64`` -- a sequential 64-bit stream used for scenario
  randomness (placements, workload phases).
* ``keyed_uniform`` -- a stateless per-(frame, receiver) draw used for
  packet-loss decisions, so loss outcomes do not depend on the order in
  which receivers are enumerated.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_KEY2 = 0xC2B2AE3D27D4EB4F


def mix64(x: int) -> int:
    """SplitMix64 finalizer: a bijective avalanche of a 64-bit value."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return x ^ (x >> 31)


class SplitMix64:
    """Sequential generator: state += GOLDEN; output = mix64(state)."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def random(self) -> float:
        """Uniform float in [0, 1): top 53 bits of the next word."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) by 128-bit multiply-shift (documented, portable)."""
        return (self.next_u64() * n) >> 64


def keyed_uniform(seed: int, frame_uid: int, receiver: int) -> float:
    """Uniform in [0, 1) fully determined by (seed, frame_uid, receiver).

    h1 = mix64(seed XOR frame_uid * GOLDEN)
    h2 = mix64(h1 XOR receiver * KEY2)
    u  = (h2 >> 11) * 2^-53
    """
    h = mix64(seed ^ ((frame_uid * _GOLDEN) & _MASK64))
    h = mix64(h ^ ((receiver * _KEY2) & _MASK64))
    return (h >> 11) * 2.0**-53
