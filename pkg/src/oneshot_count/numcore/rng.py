"""SplitMix64 random stream.

Output ``i`` (1-based) of a stream with state ``s`` is ``mix(s + i * GAMMA)``
in wrapping 64-bit arithmetic, with Steele/Lea/Flood's finalizer ``mix``.
Everything is plain uint64 integer arithmetic, so streams are identical on
every platform. Floats take the top 53 bits.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """Scalar finalizer, used for deriving child seeds."""
    return int(_mix(np.array([value & _MASK], dtype=np.uint64))[0])


class Rng:
    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def derive(self, key: int) -> "Rng":
        """Independent child stream; does not advance this stream."""
        return Rng(mix64(self.state ^ mix64(int(key) + GAMMA)))

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
        out = _mix(np.uint64(self.state) + steps)
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def uniform(self, low: float = 0.0, high: float = 1.0, size: int | tuple | None = None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def integers(self, low: int, high: int, size: int | None = None):
        """Uniform integers in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(size=1 if size is None else size)
        v = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        if size is None:
            return int(v.reshape(-1)[0])
        return v

    def normal(self, size: int | tuple) -> np.ndarray:
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = self.uniform(size=m)
        u2 = self.uniform(size=m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return z.reshape(size)

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")
