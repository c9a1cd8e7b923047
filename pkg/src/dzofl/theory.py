"""Closed-form constants and bounds of the convergence analysis.

``q``       probability that at least one uplink packet arrives
``c1``      scale of the estimator mean, ``E[g] = c1 * gamma * (grad F + b)``
``c2``      second-moment constant, ``E||g||^2 <= c2 * gamma^2``
``c3``      bias constant, ``||b|| <= c3 * gamma``
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .channel import q_success
from .errors import ConfigError, DomainError
from .schedule import StepSchedule

MAX_ENUM_DIM = 12


@dataclass(frozen=True)
class TheoryConstants:
    alpha1: float
    alpha2: float
    alpha3: float
    sigma: float
    L: float
    L_xi: float
    N: int
    p: float
    q: float
    c1: float
    c2: float
    c3: float

    def to_dict(self) -> dict:
        return asdict(self)


def constants(p: float, N: int, alpha1: float, alpha2: float, alpha3: float,
              sigma: float, L_xi: float, L: float = 1.0) -> TheoryConstants:
    if not 0 < p <= 1:
        raise ConfigError(f"success probability must satisfy 0<p≤1, got {p}")
    if N < 1:
        raise ConfigError("N must be >= 1")
    for name, v in (("alpha1", alpha1), ("alpha2", alpha2), ("alpha3", alpha3), ("L_xi", L_xi), ("L", L)):
        if not v > 0:
            raise ConfigError(f"{name} must be positive, got {v}")
    if sigma < 0:
        raise ConfigError(f"sigma must be nonnegative, got {sigma}")
    q = q_success(p, N)
    return TheoryConstants(
        alpha1=alpha1, alpha2=alpha2, alpha3=alpha3, sigma=sigma, L=L, L_xi=L_xi, N=N, p=p, q=q,
        c1=2 * q * alpha2,
        c2=4 * q * (sigma + 1) ** 2 * alpha3**4 * N**2 * L_xi,
        c3=alpha1 * alpha3**3 * N / (2 * alpha2),
    )


@dataclass(frozen=True)
class RateBoundInputs:
    delta0: float
    schedule: StepSchedule
    K: int
    constants: TheoryConstants


def rate_bound_terms(inp: RateBoundInputs) -> dict[str, float]:
    s, c = inp.schedule, inp.constants
    u1, u2 = s.upsilon1, s.upsilon2
    u3 = u1 + u2
    if u3 > 1:
        raise DomainError(f"υ₁+υ₂={u3} > 1: the step sizes are not summable in the required sense")
    if not u1 + 3 * u2 > 1 or not 2 * u3 > 1:
        raise DomainError("the bound needs υ₁+3υ₂>1 and 2(υ₁+υ₂)>1")
    if inp.K < 0:
        raise DomainError("horizon K must be nonnegative")
    A0 = 2 * inp.delta0 / (c.c1 * s.alpha0 * s.gamma0)
    A1 = (u1 + 3 * u2) * (c.c3 * s.gamma0) ** 2
    A2 = 2 * u3 * c.c2 * s.alpha0 * s.gamma0 * c.L / c.c1
    if u3 < 1:
        prefactor = (1 - u3) / ((inp.K + 2) ** (1 - u3) - 1)
    else:
        prefactor = 1 / math.log(inp.K + 2)
    bracket = A0 + A1 / (u1 + 3 * u2 - 1) + A2 / (2 * u3 - 1)
    return {"A0": A0, "A1": A1, "A2": A2, "prefactor": prefactor, "bracket": bracket,
            "bound": prefactor * bracket}


def rate_bound(inp: RateBoundInputs) -> float:
    """Upper bound on ``sum a_k g_k ||grad F||^2 / sum a_k g_k`` after ``K`` rounds."""
    return rate_bound_terms(inp)["bound"]


def partial_sum_bounds(s: StepSchedule, K: int) -> tuple[float, float, float]:
    """``(upper sum a g^3, upper sum a^2 g^2, lower sum a g)`` over ``k = 0..K``."""
    u1, u2 = s.upsilon1, s.upsilon2
    u3 = u1 + u2
    cubic = s.alpha0 * s.gamma0**3 * (u1 + 3 * u2) / (u1 + 3 * u2 - 1)
    square = s.alpha0**2 * s.gamma0**2 * (2 * u3) / (2 * u3 - 1)
    if u3 < 1:
        lower = s.alpha0 * s.gamma0 / (1 - u3) * ((K + 2) ** (1 - u3) - 1)
    else:
        lower = s.alpha0 * s.gamma0 * math.log(K + 2)
    return cubic, square, lower


def rademacher_directions(d: int) -> np.ndarray:
    """All ``2**d`` vectors with entries +-1/sqrt(d), in a fixed order."""
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    return signs / math.sqrt(d)


def bias_oracle(obj, theta, gamma: float, stream=None, samples: int = 0) -> np.ndarray:
    """Bias of the noiseless two-point estimator at ``theta``.

    Returns ``E_phi[phi (F(theta+gamma phi) - F(theta-gamma phi))] / (2 gamma alpha2) - grad F(theta)``.
    For ``d <= 12`` the expectation is an exact average over every direction.
    Larger ``d`` requires a perturbation ``stream`` and a Monte Carlo sample count.
    """
    from .perturbation import moments, phi

    theta = np.asarray(theta, dtype=np.float64)
    d = theta.shape[-1]
    if d <= MAX_ENUM_DIM and not samples:
        dirs = rademacher_directions(d)
        alpha2 = 1.0 / d
    else:
        if stream is None or samples <= 0:
            raise ConfigError(f"d={d} is too large to enumerate; pass a stream and a sample count")
        dirs = phi(stream, np.arange(samples))
        alpha2 = moments(stream)[0]
    diff = obj.value(theta + gamma * dirs) - obj.value(theta - gamma * dirs)
    mean = (dirs * diff[:, None]).sum(axis=0) / len(dirs)
    return mean / (2 * gamma * alpha2) - obj.grad(theta)
