"""Counter-based random streams built on the SplitMix64 mixer.

Every variate is a pure function of ``(key, counter)``, so a path's noise
does not depend on how many other paths are simulated or in which order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))


def splitmix64(x: int) -> int:
    """One SplitMix64 output for state ``x`` (state advanced by the golden gamma first)."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _U_M1
        z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


def path_keys(master_seed: int, path_indices) -> np.ndarray:
    """``splitmix64(master_seed XOR path_index)`` for each index."""
    idx = np.asarray(path_indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64((np.uint64(master_seed & MASK64) ^ idx) + _U_GOLDEN)


def derive_keys(keys: np.ndarray, salt: int) -> np.ndarray:
    """Independent sub-keys for a second counter domain."""
    with np.errstate(over="ignore"):
        return mix64((keys ^ np.uint64(salt)) + _U_GOLDEN)


def raw(keys: np.ndarray, counters) -> np.ndarray:
    """The ``counter``-th SplitMix64 output of the stream whose state starts at ``key``."""
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(keys + (c + np.uint64(1)) * _U_GOLDEN)


def uniforms(keys: np.ndarray, counters) -> np.ndarray:
    """Uniform variates strictly inside ``(0, 1)``."""
    bits = raw(keys, counters) >> _S11
    return (bits.astype(np.float64) + 0.5) * 2.0 ** -53


def normals(keys: np.ndarray, counters) -> np.ndarray:
    """Standard normal variates by inversion."""
    return ndtri(uniforms(keys, counters))
