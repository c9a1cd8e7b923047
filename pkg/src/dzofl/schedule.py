"""Polynomially decaying step sizes ``alpha_k`` (learning rate) and
``gamma_k`` (perturbation radius)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SUM_RANGE = "0<υ₁+υ₂≤1"
CUBIC_SUM = "υ₁+3υ₂>1"
SQUARE_SUM = "υ₁+υ₂>0.5"
NONNEGATIVE = "υ₁≥0 and υ₂≥0"


@dataclass(frozen=True)
class ExponentVerdict:
    valid: bool
    violations: tuple[str, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return self.valid


def validate_exponents(upsilon1: float, upsilon2: float) -> ExponentVerdict:
    """Check the sufficient conditions on the decay exponents.

    The returned verdict lists every violated constraint by name.
    """
    s = upsilon1 + upsilon2
    violations = []
    if upsilon1 < 0 or upsilon2 < 0:
        violations.append(NONNEGATIVE)
    if not 0 < s <= 1:
        violations.append(SUM_RANGE)
    if not upsilon1 + 3 * upsilon2 > 1:
        violations.append(CUBIC_SUM)
    if not s > 0.5:
        violations.append(SQUARE_SUM)
    return ExponentVerdict(not violations, tuple(violations))


@dataclass(frozen=True)
class StepSchedule:
    alpha0: float = 0.1
    gamma0: float = 0.5
    upsilon1: float = 0.26
    upsilon2: float = 0.26

    def __post_init__(self):
        if not self.alpha0 > 0 or not self.gamma0 > 0:
            raise ConfigError("alpha0 and gamma0 must be positive")
        verdict = validate_exponents(self.upsilon1, self.upsilon2)
        if not verdict:
            raise ConfigError(
                f"invalid step-size exponents ({self.upsilon1}, {self.upsilon2}): "
                "violates " + ", ".join(verdict.violations)
            )

    @property
    def upsilon3(self) -> float:
        return self.upsilon1 + self.upsilon2


def alpha(s: StepSchedule, k):
    """Learning rate ``alpha0 * (1+k)**-upsilon1``; ``k`` may be an array."""
    return s.alpha0 * np.power(1.0 + np.asarray(k, dtype=np.float64), -s.upsilon1)


def gamma(s: StepSchedule, k):
    """Perturbation radius ``gamma0 * (1+k)**-upsilon2``."""
    return s.gamma0 * np.power(1.0 + np.asarray(k, dtype=np.float64), -s.upsilon2)
