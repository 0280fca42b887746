"""Seedable splitmix64 PRNG.

All stochastic behaviour in the package (weight init, dropout masks,
synthetic data, batch shuffling) draws from an explicitly threaded
instance of this generator; there is no hidden global state.  The
scalar and vectorized paths produce the same stream, and the 64-bit
state can be captured and restored exactly for checkpointing.
"""

import numpy as np

_MASK = (1 << 64) - 1
_PHI = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U53_INV = 2.0 ** -53


def derive_seed(seed, index):
    """Stable 64-bit child seed for (seed, index); used so per-epoch batch
    order is recomputable without replaying the main stream."""
    return _mix((int(seed) + (int(index) + 1) * _PHI) & _MASK)


def _mix(z):
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """splitmix64 stream: state advances by a fixed odd constant, output is a bijective mix."""

    def __init__(self, seed):
        self._state = int(seed) & _MASK

    @property
    def state(self):
        return self._state

    @state.setter
    def state(self, value):
        self._state = int(value) & _MASK

    def next_u64(self):
        self._state = (self._state + _PHI) & _MASK
        return _mix(self._state)

    def fill_u64(self, n):
        """n consecutive outputs, identical to n next_u64() calls."""
        if n == 0:
            self._state = self._state  # no draws consumed
            return np.empty(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            ks = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_PHI)
            z = np.uint64(self._state) + ks
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _PHI) & _MASK
        return z

    def uniform(self, shape=None):
        """Floats in [0, 1) with 53-bit resolution; scalar when shape is None."""
        if shape is None:
            return (self.next_u64() >> 11) * _U53_INV
        n = int(np.prod(shape))
        u = (self.fill_u64(n) >> np.uint64(11)).astype(np.float64) * _U53_INV
        return u.reshape(shape)

    def uniform_range(self, low, high, shape):
        return low + (high - low) * self.uniform(shape)

    def normal(self, shape):
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u = self.fill_u64(2 * m)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = ((u[:m] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53_INV
        u2 = (u[m:] >> np.uint64(11)).astype(np.float64) * _U53_INV
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def randbelow(self, bound):
        """Integer in [0, bound)."""
        return int(self.uniform() * bound)

    def permutation(self, n):
        """Fisher-Yates shuffle of arange(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def spawn(self):
        """Independent child generator seeded from this stream."""
        return SplitMix64(self.next_u64())
