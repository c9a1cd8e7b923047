"""Shared perturbation directions.

The server and every device derive the direction for round ``k`` from the
same pre-shared seed, so nothing but the seed ever has to be exchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .streams import CounterStream

DISTRIBUTIONS = ("rademacher_scaled",)


@dataclass(frozen=True)
class PerturbationStream:
    seed: int
    d: int
    distribution: str = "rademacher_scaled"

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"dimension must be >= 1, got {self.d}")
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"unknown perturbation distribution {self.distribution!r}")

    @property
    def counter(self) -> CounterStream:
        return CounterStream(self.seed, "phi")


def phi(stream: PerturbationStream, k) -> np.ndarray:
    """Direction for round ``k``; entries are +-1/sqrt(d).

    ``k`` may be an array of rounds, in which case the result has shape
    ``(len(k), d)``.
    """
    return stream.counter.signs(k, stream.d) / math.sqrt(stream.d)


def moments(stream: PerturbationStream) -> tuple[float, float]:
    """Return ``(alpha2, alpha3)``: per-component second moment and norm bound."""
    return 1.0 / stream.d, 1.0
