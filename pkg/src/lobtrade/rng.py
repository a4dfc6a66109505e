"""Counter-based pseudo-random number generator.

All randomness in this package (synthetic data, weight init, dropout
masks, shuffling) flows through this generator so that results are
reproducible bit-for-bit from a single seed, independent of evaluation
order, thread count, or host platform.

Algorithm (all arithmetic modulo 2**64):

    mix(z):   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27;  z *= 0x94D049BB133111EB
              z ^= z >> 31                       (splitmix64 finalizer)

    raw(key, c) = mix(key + (c + 1) * 0x9E3779B97F4A7C15)

i.e. the c-th output of a splitmix64 sequence started at state `key`.
Because outputs are a pure function of (key, counter), independent
substreams are cheap: a child key is derived by folding a text label
and integer indices into the parent key with `mix`, and any slice of a
stream can be generated without generating its prefix.

Derived values:

    uniform:  (raw >> 11) * 2**-53                       in [0, 1)
    normal:   Box-Muller cosine branch on counter pair (2i, 2i+1),
              z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
    integers: lo + floor(u * (hi - lo + 1))              in [lo, hi]
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_key(seed: int, label: str, *indices: int) -> int:
    """Derive a substream key from a seed, a text label and integer indices.

    The label namespaces the stream ("data", "init", "dropout", ...);
    indices select e.g. a day, an epoch or a Monte-Carlo pass.
    """
    key = mix64(seed & _MASK64)
    for byte in label.encode("utf-8"):
        key = mix64(key ^ (byte + 1))
    for idx in indices:
        key = mix64(key ^ ((idx + 0x9E37) & _MASK64))
    return key


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


class CounterRng:
    """Stateful view of one counter-based stream.

    The internal counter advances by the number of raw values consumed,
    so interleaving calls of different sizes stays reproducible.  Use
    `spawn` for independent child streams.
    """

    def __init__(self, key: int, counter: int = 0):
        self.key = key & _MASK64
        self.counter = counter

    @classmethod
    def from_seed(cls, seed: int, label: str, *indices: int) -> "CounterRng":
        return cls(derive_key(seed, label, *indices))

    def spawn(self, label: str, *indices: int) -> "CounterRng":
        return CounterRng(derive_key(self.key, label, *indices))

    def _raw(self, n: int) -> np.ndarray:
        counters = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.key) + (counters + np.uint64(1)) * np.uint64(_GOLDEN)
        return _mix_array(state)

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Uniform floats in [0, 1)."""
        n = int(np.prod(shape)) if shape != () else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if shape == () else u.reshape(shape)

    def normal(self, shape: int | tuple[int, ...] = ()) -> np.ndarray | float:
        """Standard normal draws (one per raw counter pair)."""
        n = int(np.prod(shape)) if shape != () else 1
        raw = self._raw(2 * n)
        u1 = (raw[0::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * math.pi * u2)
        return float(z[0]) if shape == () else z.reshape(shape)

    def integers(self, low: int, high: int, shape: int | tuple[int, ...] = ()) -> np.ndarray | int:
        """Uniform integers in the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty integer range [{low}, {high}]")
        n = int(np.prod(shape)) if shape != () else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        vals = low + np.floor(u * (high - low + 1)).astype(np.int64)
        return int(vals[0]) if shape == () else vals.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic random permutation of range(n)."""
        return np.argsort(self.uniform((n,)), kind="stable")

    def bernoulli(self, p_true: float, shape: int | tuple[int, ...]) -> np.ndarray:
        """Boolean draws, True with probability `p_true`."""
        return self.uniform(shape) < p_true
