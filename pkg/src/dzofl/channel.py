"""Uplink packet-erasure channel and the server-side rescaled aggregation."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .streams import CounterStream


@dataclass(frozen=True)
class ErasureChannel:
    p: float
    N: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ConfigError(f"success probability must satisfy 0<p≤1, got {self.p}")
        if self.N < 1:
            raise ConfigError(f"device count must be >= 1, got {self.N}")

    @property
    def counter(self) -> CounterStream:
        return CounterStream(self.seed, "channel")


def received_mask(ch: ErasureChannel, k) -> np.ndarray:
    """Boolean reception mask, shape ``np.shape(k) + (N,)``; column i is device i+1."""
    return ch.counter.uniform(k, ch.N) < ch.p


def sample_received_set(ch: ErasureChannel, k: int) -> frozenset[int]:
    """Ids (1..N) of the devices whose round-``k`` packet was decoded."""
    mask = received_mask(ch, int(k))
    return frozenset(int(i) + 1 for i in np.flatnonzero(mask))


def q_success(p, N: int):
    """Probability that at least one of N packets is received.

    Works on floats and on ``fractions.Fraction`` (exact arithmetic).
    """
    if not 0 < p <= 1:
        raise ConfigError(f"success probability must satisfy 0<p≤1, got {p}")
    if N < 1:
        raise ConfigError(f"device count must be >= 1, got {N}")
    return 1 - (1 - p) ** N


def aggregate(received: Mapping[int, float], N: int) -> float:
    """``N/|S| * sum`` of the received scalars, or 0 when nothing arrived."""
    if any(not 1 <= i <= N for i in received):
        raise ConfigError(f"received ids must lie in 1..{N}")
    if not received:
        return 0.0
    return N / len(received) * float(sum(received.values()))


def aggregate_masked(values: np.ndarray, mask: np.ndarray, N: int) -> np.ndarray:
    """Vectorized :func:`aggregate` over the last axis (devices).

    ``values`` may carry a trailing component axis (baseline gradients), in
    which case ``mask`` is broadcast over it.
    """
    extra = values.ndim - mask.ndim
    m = mask.reshape(mask.shape + (1,) * extra)
    axis = mask.ndim - 1
    count = mask.sum(axis=-1).reshape(mask.shape[:-1] + (1,) * extra)
    total = np.where(m, values, 0.0).sum(axis=axis)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(count > 0, N / np.maximum(count, 1) * total, 0.0)
    return out
