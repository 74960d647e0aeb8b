"""SplitMix64 pseudo-random generator.

Recurrence (all arithmetic mod 2**64)::

    state <- state + 0x9E3779B97F4A7C15
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB
    out <- z ^ (z >> 31)

Doubles are drawn as ``(out >> 11) * 2**-53``; normals use Box-Muller on
consecutive pairs of doubles. Everything here is vectorised with uint64 numpy
arithmetic, which wraps silently, so a stream of ``n`` outputs is identical to
``n`` scalar steps of the recurrence.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(GAMMA)
        self.state = (self.state + n * GAMMA) & _MASK
        return mix64(states)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1], keeps log finite
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u[m:]), r * np.sin(2 * np.pi * u[m:])])
        return std * z[:n].reshape(shape)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers in [0, high); modulo bias is below 2**-40 for any sane ``high``."""
        return (self.next_u64(size) % np.uint64(high)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def fork(self, key: int) -> "SplitMix64":
        """Independent child stream; does not advance this generator."""
        seed = int(mix64(np.array([(self.state ^ (key * GAMMA)) & _MASK], dtype=np.uint64))[0])
        return SplitMix64(seed)
