"""Counter-based keyed random streams.

Every random quantity in a run is a pure function of ``(seed, tag, k, j)``:
the run seed, a stream tag (``"phi"``, ``"channel"``, ...), the round index
and a within-round index. No generator state has to be carried between
rounds or shared between the server and the devices, and any block of
rounds can be regenerated in one vectorized call.

The mixing function is the SplitMix64 finalizer. For a fixed key the
sequence over consecutive ``k`` is the SplitMix64 sequence, and each round
output seeds a second SplitMix64 sequence over ``j``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)
_TWO_M53 = 2.0**-53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _C1
    z = (z ^ (z >> np.uint64(27))) * _C2
    return z ^ (z >> np.uint64(31))


@lru_cache(maxsize=1024)
def stream_key(seed: int, tag: str) -> np.uint64:
    """64-bit key for the stream named ``tag`` under ``seed``."""
    s = np.array([int(seed) & _MASK64], dtype=np.uint64)
    t = np.array([zlib.crc32(tag.encode())], dtype=np.uint64)
    return _mix64(_mix64(s) ^ _mix64(t + _GOLDEN))[0]


def keyed_bits(key: np.uint64, k, n: int) -> np.ndarray:
    """Raw 64-bit words for rounds ``k`` (scalar or 1-D) and indices ``0..n-1``.

    Output shape is ``np.shape(k) + (n,)``.
    """
    k = np.asarray(k, dtype=np.int64)
    if np.any(k < 0):
        raise ValueError("round index must be nonnegative")
    ku = k.astype(np.uint64)[..., None]
    j = np.arange(1, n + 1, dtype=np.uint64)
    h = _mix64(key + (ku + np.uint64(1)) * _GOLDEN)
    return _mix64(h + j * _GOLDEN)


@dataclass(frozen=True)
class CounterStream:
    """A named, seeded stream addressed by ``(round, index)``."""

    seed: int
    tag: str

    @cached_property
    def key(self) -> np.uint64:
        return stream_key(self.seed, self.tag)

    def bits(self, k, n: int) -> np.ndarray:
        return keyed_bits(self.key, k, n)

    def uniform(self, k, n: int) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 random bits each."""
        return (self.bits(k, n) >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def signs(self, k, n: int) -> np.ndarray:
        """Fair +1/-1 draws taken from the top bit."""
        top = (self.bits(k, n) >> np.uint64(63)).astype(np.int8)
        return (2 * top - 1).astype(np.float64)
