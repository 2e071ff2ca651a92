"""Counter-based random streams built on the SplitMix64 mixer.

Every draw is a pure function of ``(key, counter)``:

    u = (mix64(key + (counter + 1) * GOLDEN) >> 11) * 2**-53

so a stream is just a 64-bit key plus a position. Child keys are derived with
``derive(parent, label) = mix64(parent ^ mix64((label + 1) * GOLDEN))``, which
makes the streams splittable: per-user, per-activation and per-run streams are
independent of the order in which they are consumed.
"""
from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def derive(key, label):
    return mix64(np.uint64(key) ^ mix64((np.uint64(label) + _ONE) * _U_GOLDEN))


@njit(cache=True, nogil=True)
def uniform_at(key, counter):
    z = mix64(np.uint64(key) + (np.uint64(counter) + _ONE) * _U_GOLDEN)
    return float(z >> _S11) * _INV53


@njit(cache=True, nogil=True)
def fill_uniform(key, counter, out):
    for i in range(out.shape[0]):
        out[i] = uniform_at(key, counter + i)
    return counter + out.shape[0]


def root_key(seed: int) -> int:
    """Map a user-facing 64-bit seed to a stream key."""
    return int(mix64(np.uint64(seed & MASK64)))


def derive_key(seed: int, *labels: int) -> int:
    key = root_key(seed)
    for label in labels:
        key = int(derive(np.uint64(key), np.uint64(label & MASK64)))
    return key


class Stream:
    """A position in a counter-based stream. Drawing advances the counter."""

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & MASK64
        self.counter = int(counter)

    @classmethod
    def from_seed(cls, seed: int, *labels: int) -> "Stream":
        return cls(derive_key(seed, *labels))

    def spawn(self, label: int) -> "Stream":
        return Stream(int(derive(np.uint64(self.key), np.uint64(label & MASK64))))

    def uniform(self, size: int | None = None):
        if size is None:
            u = uniform_at(np.uint64(self.key), self.counter)
            self.counter += 1
            return u
        out = np.empty(size)
        self.counter = int(fill_uniform(np.uint64(self.key), self.counter, out))
        return out

    def __repr__(self):
        return f"Stream(key={self.key:#018x}, counter={self.counter})"
