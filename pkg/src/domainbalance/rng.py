"""Deterministic random number generation.

The generator is xoshiro256** (Blackman & Vigna), with the four 64-bit state
words seeded from consecutive outputs of a splitmix64 stream over the user
seed. Both algorithms are pure 64-bit integer arithmetic, so a given seed
produces the identical stream on every platform and Python build. numpy's bit
generators are deliberately not used here: the stream itself is part of the
on-disk reproducibility contract.

Conventions, pinned so that serialized state stays four words:

- uniform doubles are (next_u64() >> 11) * 2**-53, in [0, 1)
- gaussians come from Box-Muller over pairs of uniforms; each call generates
  exactly ceil(n/2) pairs and discards any unused half, so no spare value is
  carried between calls
- bounded integers use rejection sampling on the top of the 64-bit range,
  which is exact (no modulo bias)
- derive(stream_id) gives an independent child generator whose seed is
  splitmix64(splitmix64(stream_id) ^ seed); used for per-class / per-domain
  streams that must not depend on generation order
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_TWO53 = float(1 << 53)


def _splitmix64(x: int) -> int:
    z = (x + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Rng:
    """xoshiro256** stream with splitmix64 seeding."""

    __slots__ = ("seed", "_s")

    def __init__(self, seed: int):
        seed = int(seed) & _MASK64
        self.seed = seed
        x = seed
        s = []
        for _ in range(4):
            x = (x + _GAMMA) & _MASK64
            z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
            s.append(z ^ (z >> 31))
        if not any(s):  # all-zero state is the one fixed point; unreachable via splitmix
            s[0] = 1
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        out = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return out

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) / _TWO53

    def uniform_block(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        nxt = self.next_u64
        for i in range(n):
            out[i] = (nxt() >> 11) / _TWO53
        return out

    def gaussian_block(self, n: int) -> np.ndarray:
        """n standard normals via Box-Muller; consumes 2*ceil(n/2) stream words."""
        pairs = (n + 1) // 2
        u = np.empty(2 * pairs, dtype=np.float64)
        nxt = self.next_u64
        for i in range(2 * pairs):
            u[i] = (nxt() >> 11) / _TWO53
        u1 = u[0::2] + (1.0 / _TWO53)  # shift into (0, 1] so log() is safe
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def gaussian_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.gaussian_block(rows * cols).reshape(rows, cols)

    def randint_below(self, bound: int) -> int:
        """Uniform integer in [0, bound), exact via rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % bound)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        idx = np.arange(n, dtype=np.int64)
        for j in range(n - 1, 0, -1):
            k = self.randint_below(j + 1)
            idx[j], idx[k] = idx[k], idx[j]
        return idx

    def derive(self, stream_id: int) -> "Rng":
        return Rng(_splitmix64(_splitmix64(int(stream_id) & _MASK64) ^ self.seed))

    def get_state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def set_state(self, state) -> None:
        s = [int(w) & _MASK64 for w in state]
        if len(s) != 4:
            raise ValueError("state must be four 64-bit words")
        self._s = s
