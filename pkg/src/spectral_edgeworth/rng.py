"""Counter-based random words.

Every random number is a pure function ``word(seed, stream, counter)`` built
from the SplitMix64 finalizer, so each Monte Carlo trial owns an independent
substream and results do not depend on how trials are scheduled.

Constants (all fixed, 64-bit):

* ``GOLDEN = 0x9E3779B97F4A7C15``  Weyl increment of SplitMix64
* ``MIX1 = 0xBF58476D1CE4E5B9``, ``MIX2 = 0x94D049BB133111EB``  finalizer multipliers
* ``STREAM = 0xD1B54A32D192ED03``  multiplier separating stream ids
"""

from __future__ import annotations

import numba as nb
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
STREAM = np.uint64(0xD1B54A32D192ED03)
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


@nb.njit(inline="always", cache=True)
def stream_key(seed, stream):
    return mix64(np.uint64(seed) * GOLDEN ^ mix64(np.uint64(stream) * STREAM + GOLDEN))


@nb.njit(inline="always", cache=True)
def word(key, counter):
    return mix64(key + (np.uint64(counter) + np.uint64(1)) * GOLDEN)


@nb.njit(inline="always", cache=True)
def uniform(key, counter):
    """Double in [0, 1) from the top 53 bits of a word."""
    return float(word(key, counter) >> np.uint64(11)) * _INV53


@nb.njit(cache=True)
def uniforms(seed, stream, count):
    key = stream_key(np.uint64(seed), np.uint64(stream))
    out = np.empty(count)
    for c in range(count):
        out[c] = uniform(key, c)
    return out


def normalize_seed(seed: int) -> int:
    if seed is None:
        raise ValueError("a seed is required")
    return int(seed) & 0xFFFFFFFFFFFFFFFF
