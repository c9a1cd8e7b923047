"""Unbiased scalar quantization by stochastic mantissa rounding.

Payload layout for ``M`` bits: 1 sign bit, 7 exponent bits and
``m = M - 8`` mantissa bits. A nonzero value is ``+-2**e * (1 + f)`` with
``e`` in [-63, 63] and ``f`` on a grid of step ``2**-m``; the all-zero
exponent code is reserved for zero. Rounding between the two neighbouring
grid points is randomized in proportion to distance, so ``E[Q(x)] = x``
and ``Var[Q(x)] <= (ulp/2)**2 <= 2**(-2m) * x**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, QuantizerRangeError

EXPONENT_BITS = 7
E_MIN = -63
E_MAX = 63
KINDS = ("stochastic_mantissa", "identity")


@dataclass(frozen=True)
class QuantizerSpec:
    kind: str = "stochastic_mantissa"
    M: int = 16

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown quantizer kind {self.kind!r}")
        if self.kind == "stochastic_mantissa" and self.M < 1 + EXPONENT_BITS + 1:
            raise ConfigError(f"M={self.M} leaves no mantissa bits")
        if self.M < 1:
            raise ConfigError("M must be positive")

    @property
    def mantissa_bits(self) -> int | None:
        if self.kind == "identity":
            return None
        return self.M - 1 - EXPONENT_BITS

    @cached_property
    def max_value(self) -> float:
        if self.kind == "identity":
            return float("inf")
        return float(np.ldexp(2.0 - 2.0 ** -self.mantissa_bits, E_MAX))

    def layout(self) -> dict:
        return {
            "kind": self.kind,
            "M": self.M,
            "sign_bits": 1 if self.kind != "identity" else None,
            "exponent_bits": EXPONENT_BITS if self.kind != "identity" else None,
            "mantissa_bits": self.mantissa_bits,
            "exponent_range": [E_MIN, E_MAX] if self.kind != "identity" else None,
            "sigma": certified_sigma(self),
        }


def certified_sigma(spec: QuantizerSpec) -> float:
    """Relative variance bound: ``E[(Q(x)-x)^2] <= sigma * x^2``."""
    if spec.kind == "identity":
        return 0.0
    return 2.0 ** (-2 * spec.mantissa_bits)


def _uniforms(rng, shape) -> np.ndarray:
    if isinstance(rng, np.random.Generator):
        return rng.random(shape)
    u = np.asarray(rng, dtype=np.float64)
    if u.shape != shape:
        u = np.broadcast_to(u, shape)
    return u


def stochastic_round(spec: QuantizerSpec, x, u) -> tuple[np.ndarray, int]:
    """Quantize ``x`` given uniforms ``u`` of the same shape.

    Returns the quantized array and the number of nonzero inputs that fell
    below the smallest representable magnitude and were flushed to zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise QuantizerRangeError("cannot quantize a non-finite value")
    if spec.kind == "identity":
        return x.copy(), 0
    ax = np.abs(x)
    if np.any(ax > spec.max_value):
        raise QuantizerRangeError(
            f"|x|={float(ax.max())!r} exceeds the {spec.M}-bit range {spec.max_value!r}"
        )
    m = spec.mantissa_bits
    _, ex = np.frexp(ax)
    e = ex - 1
    ulp = np.ldexp(1.0, e - m)
    scaled = ax / ulp
    lo = np.floor(scaled)
    frac = scaled - lo
    q = (lo + (np.asarray(u) < frac)) * ulp
    under = (ax > 0) & (ax < 2.0**E_MIN)
    q = np.where(under | (ax == 0), 0.0, q)
    return np.where(x < 0, -q, q), int(np.count_nonzero(under))


def quantize(spec: QuantizerSpec, x, rng):
    """Quantize a scalar or array.

    ``rng`` is either a ``numpy.random.Generator`` or an array of uniform
    draws on [0, 1) shaped like ``x``. Returns ``(value, payload_bits)``
    where ``payload_bits`` is ``M`` per scalar.
    """
    xa = np.asarray(x, dtype=np.float64)
    values, _ = stochastic_round(spec, xa, _uniforms(rng, xa.shape))
    bits = spec.M * xa.size
    if xa.ndim == 0:
        return float(values), bits
    return values, bits
