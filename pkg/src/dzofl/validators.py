"""Statistical and deterministic checks of the analysis against the simulator.

Every check returns a :class:`CheckResult`. :func:`run_validators` bundles the
checks that apply to a configuration into a JSON-ready report whose layout is
fixed by ``schemas/validator_report.schema.json``.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources

import numpy as np

from . import __version__
from .channel import ErasureChannel, aggregate_masked, q_success, received_mask
from .config import RunConfig
from .engine import Setup, run_replications, zo_batch
from .errors import ConfigError
from .quantizer import QuantizerSpec, certified_sigma, stochastic_round
from .schedule import alpha, gamma
from .theory import MAX_ENUM_DIM, RateBoundInputs, bias_oracle, partial_sum_bounds, rate_bound_terms

SE_MULTIPLE = 4.0
CHUNK = 20_000
CHECK_NAMES = ("q_enumeration", "lemma1", "quantizer", "lemma2", "lemma3", "lemma4",
               "theorem1", "theorem2")


@dataclass
class CheckResult:
    name: str
    passed: bool
    empirical: float | list | None = None
    bound: float | list | None = None
    se: float | list | None = None
    details: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Fraction):
        return str(obj)
    return obj


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.runtime_s = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------


def enumerate_q(p: Fraction, N: int) -> Fraction:
    """Probability of a nonempty received set, summed over all ``2**N`` patterns."""
    total = Fraction(0)
    for pattern in itertools.product((0, 1), repeat=N):
        n = sum(pattern)
        if n:
            total += p**n * (1 - p) ** (N - n)
    return total


@_timed
def check_q_enumeration(ps=(0.1, 0.5, 0.9), Ns=(1, 2, 3, 4)) -> CheckResult:
    rows = []
    for p, N in itertools.product(ps, Ns):
        exact = Fraction(str(p))
        closed, brute = q_success(exact, N), enumerate_q(exact, N)
        rows.append({"p": p, "N": N, "closed_form": closed, "enumerated": brute,
                     "match": closed == brute})
    return CheckResult("q_enumeration", all(r["match"] for r in rows), details={"cases": rows})


@_timed
def check_lemma1(p: float, N: int, rounds: int = 1_000_000, seed: int = 0, values=None) -> CheckResult:
    """Mean of the rescaled aggregate of fixed scalars against ``q * sum(v)``."""
    if values is None:
        values = np.random.default_rng(seed).normal(size=N)
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (N,):
        raise ConfigError(f"expected {N} fixed scalars, got shape {v.shape}")
    ch = ErasureChannel(p, N, seed)
    total = total_sq = 0.0
    for start in range(0, rounds, CHUNK):
        ks = np.arange(start, min(start + CHUNK, rounds))
        agg = aggregate_masked(np.broadcast_to(v, (len(ks), N)), received_mask(ch, ks), N)
        total += agg.sum()
        total_sq += (agg * agg).sum()
    mean = total / rounds
    var = max(total_sq / rounds - mean * mean, 0.0) * rounds / max(rounds - 1, 1)
    se = math.sqrt(var / rounds)
    target = q_success(p, N) * v.sum()
    err = abs(mean - target)
    return CheckResult("lemma1", bool(err <= SE_MULTIPLE * se), empirical=mean, bound=target, se=se,
                       details={"p": p, "N": N, "rounds": rounds, "values": v, "abs_error": err,
                                "q": q_success(p, N)})


# ---------------------------------------------------------------------------
# quantizer
# ---------------------------------------------------------------------------


@_timed
def check_quantizer(spec: QuantizerSpec, magnitudes=None, draws: int = 100_000, seed: int = 0) -> CheckResult:
    """Per magnitude: bias within 4 SE of zero and relative variance below sigma."""
    if spec.kind == "identity":
        return CheckResult("quantizer", True, details={"skipped": "identity quantizer is exact"})
    if magnitudes is None:
        magnitudes = np.logspace(-8, 8, 30)
    sigma = certified_sigma(spec)
    rng = np.random.default_rng(seed)
    rows = []
    for x in np.asarray(magnitudes, dtype=np.float64):
        qx, _ = stochastic_round(spec, np.full(draws, x), rng.random(draws))
        err = qx - x
        bias = err.mean()
        se = err.std(ddof=1) / math.sqrt(draws)
        rel_var = float((err * err).mean() / (x * x))
        rows.append({"x": x, "bias": bias, "se": se, "relative_variance": rel_var,
                     "bias_ok": abs(bias) <= SE_MULTIPLE * se, "variance_ok": rel_var <= sigma})
    passed = all(r["bias_ok"] and r["variance_ok"] for r in rows)
    return CheckResult("quantizer", passed, empirical=max(r["relative_variance"] for r in rows),
                       bound=sigma, details={"M": spec.M, "draws": draws, "magnitudes": rows})


# ---------------------------------------------------------------------------
# estimator moments at a frozen model
# ---------------------------------------------------------------------------


def _frozen_moments(setup: Setup, theta, gamma_k: float, rounds: int):
    d = setup.objective.d
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    norm_sq = 0.0
    for start in range(0, rounds, CHUNK):
        ks = np.arange(start, min(start + CHUNK, rounds))
        g = zo_batch(setup, theta, gamma_k, ks).g
        s1 += g.sum(axis=0)
        s2 += (g * g).sum(axis=0)
        norm_sq += float((g * g).sum())
    mean = s1 / rounds
    var = np.maximum(s2 / rounds - mean * mean, 0.0) * rounds / max(rounds - 1, 1)
    return mean, var, norm_sq / rounds


@_timed
def check_lemma2(config: RunConfig, rounds: int = 100_000, gamma_k: float = 0.1, theta=None) -> CheckResult:
    """``E[g] / (c1 gamma)`` against ``grad F + b`` at a frozen model."""
    setup = Setup.from_config(config)
    obj = setup.objective
    theta = obj.theta0 if theta is None else np.asarray(theta, dtype=np.float64)
    c1 = setup.theory_constants().c1
    mean, var, _ = _frozen_moments(setup, theta, gamma_k, rounds)
    est = mean / (c1 * gamma_k)
    if obj.kind == "quadratic":
        bias, branch = np.zeros(obj.d), "zero bias (constant Hessian)"
    elif obj.d <= MAX_ENUM_DIM:
        bias, branch = bias_oracle(obj, theta, gamma_k), "enumerated bias"
    else:
        return CheckResult("lemma2", True, details={"skipped": f"bias not enumerable at d={obj.d}"})
    target = obj.grad(theta) + bias
    se = math.sqrt(var.sum() / rounds) / (c1 * gamma_k)
    err = float(np.linalg.norm(est - target))
    return CheckResult("lemma2", err <= SE_MULTIPLE * se, empirical=err, bound=SE_MULTIPLE * se, se=se,
                       details={"branch": branch, "rounds": rounds, "gamma": gamma_k, "c1": c1,
                                "estimate": est, "target": target})


@_timed
def check_lemma3(config: RunConfig, gammas=(0.2, 0.1, 0.05), rounds: int = 100_000, theta=None) -> CheckResult:
    """Empirical ``E||g||^2`` against ``c2 gamma^2`` for each radius."""
    setup = Setup.from_config(config)
    obj = setup.objective
    theta = obj.theta0 if theta is None else np.asarray(theta, dtype=np.float64)
    c2 = setup.theory_constants().c2
    rows = []
    for g in gammas:
        _, _, second = _frozen_moments(setup, theta, g, rounds)
        rows.append({"gamma": g, "second_moment": second, "bound": c2 * g * g,
                     "ok": second <= c2 * g * g})
    return CheckResult("lemma3", all(r["ok"] for r in rows),
                       empirical=[r["second_moment"] for r in rows], bound=[r["bound"] for r in rows],
                       details={"c2": c2, "rounds": rounds, "rows": rows})


@_timed
def check_lemma4(config: RunConfig, n_theta: int = 20, gammas=(0.1, 0.05, 0.025), seed: int = 0,
                 spread: float = 1.0, ratio_target: float = 2.0, ratio_tol: float = 0.25) -> CheckResult:
    """Exact bias norms against ``c3 gamma``, plus the halving ratio of the bias norm.

    ``passed`` requires both parts; ``details`` reports them separately.
    """
    setup = Setup.from_config(config)
    obj = setup.objective
    if obj.d > MAX_ENUM_DIM:
        raise ConfigError(f"exact enumeration needs d <= {MAX_ENUM_DIM}, got d={obj.d}")
    c3 = setup.theory_constants().c3
    rng = np.random.default_rng(seed)
    thetas = obj.theta0 + spread * rng.normal(size=(n_theta, obj.d))
    norms = np.array([[np.linalg.norm(bias_oracle(obj, th, g)) for g in gammas] for th in thetas])
    bounds = c3 * np.asarray(gammas)
    bound_ok = bool((norms <= bounds).all())
    ratios = norms[:, :-1] / norms[:, 1:]
    ratio_ok = bool((np.abs(ratios - ratio_target) <= ratio_tol * ratio_target).all())
    return CheckResult("lemma4", bound_ok and ratio_ok, empirical=norms.max(axis=0), bound=bounds,
                       details={"c3": c3, "gammas": gammas, "bound_ok": bound_ok, "ratio_ok": ratio_ok,
                                "ratio_target": ratio_target, "ratio_tolerance": ratio_tol,
                                "median_ratios": np.median(ratios, axis=0),
                                "min_ratio": ratios.min(), "max_ratio": ratios.max(),
                                "max_norm_over_bound": (norms / bounds).max()})


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


def mean_curve(results) -> tuple[np.ndarray, np.ndarray]:
    """Logged rounds and the replication-averaged squared gradient norm."""
    ks = results[0].column("k")
    return ks, np.mean([r.column("grad_norm_sq") for r in results], axis=0)


@_timed
def check_theorem1(config: RunConfig, results=None, window: float = 0.1, threshold: float = 0.1) -> CheckResult:
    """Trailing-window mean of ``E||grad F||^2`` below ``threshold`` times its start."""
    results = run_replications(config) if results is None else results
    ks, curve = mean_curve(results)
    tail = curve[-max(int(len(curve) * window), 1):]
    w = alpha(config.schedule, ks) * gamma(config.schedule, ks)
    incr = w * curve
    blocks = np.array_split(incr, 10)
    block_means = [float(b.mean()) for b in blocks if len(b)]
    return CheckResult("theorem1", bool(tail.mean() < threshold * curve[0]), empirical=tail.mean(),
                       bound=threshold * curve[0],
                       details={"initial": curve[0], "replications": len(results), "K": config.K,
                                "window_rounds": len(tail), "weighted_increment_block_means": block_means,
                                "increments_shrink": block_means[-1] < block_means[0],
                                "cumulative_nondecreasing": bool((incr >= 0).all())})


def direct_partial_sums(schedule, K: int) -> tuple[float, float, float]:
    ks = np.arange(K + 1)
    a, g = alpha(schedule, ks), gamma(schedule, ks)
    return float((a * g**3).sum()), float((a * a * g * g).sum()), float((a * g).sum())


@_timed
def check_theorem2(config: RunConfig, Ks=(1_000, 10_000), results=None) -> CheckResult:
    """Weighted gradient average after each ``K`` against the rate bound.

    Runs are pure functions of the configuration, so the first ``K+1``
    rounds of one long run are the run with horizon ``K``.
    """
    Ks = sorted(int(K) for K in Ks)
    if results is None:
        results = run_replications(config.with_overrides(K=Ks[-1]))
    setup = results[0].setup
    obj = setup.objective
    if obj.known_minimum is None:
        return CheckResult("theorem2", True, details={"skipped": "no known minimum; bound unavailable"})
    consts = setup.theory_constants()
    delta0 = float(obj.value(obj.theta0)) - obj.known_minimum
    ks, curve = mean_curve(results)
    w = alpha(config.schedule, ks) * gamma(config.schedule, ks)
    rows = []
    for K in Ks:
        sel = ks <= K
        avg = float((w[sel] * curve[sel]).sum() / w[sel].sum())
        bound = rate_bound_terms(RateBoundInputs(delta0, config.schedule, K, consts))["bound"]
        cubic, square, lower = partial_sum_bounds(config.schedule, K)
        d_cubic, d_square, d_lin = direct_partial_sums(config.schedule, K)
        sandwich = d_cubic <= cubic and d_square <= square and d_lin >= lower
        rows.append({"K": K, "weighted_average": avg, "rate_bound": bound, "bound_ok": avg <= bound,
                     "sum_a_g3": d_cubic, "sum_a_g3_upper": cubic, "sum_a2_g2": d_square,
                     "sum_a2_g2_upper": square, "sum_a_g": d_lin, "sum_a_g_lower": lower,
                     "sandwich_ok": sandwich})
    passed = all(r["bound_ok"] and r["sandwich_ok"] for r in rows)
    return CheckResult("theorem2", passed, empirical=[r["weighted_average"] for r in rows],
                       bound=[r["rate_bound"] for r in rows],
                       details={"delta0": delta0, "replications": len(results), "rows": rows})


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------


def run_validators(config: RunConfig, checks=None, rounds: int = 100_000,
                   mc_rounds: int = 1_000_000) -> dict:
    """Run the named checks (default: all) for ``config`` and return the report."""
    checks = list(CHECK_NAMES if checks is None else checks)
    unknown = set(checks) - set(CHECK_NAMES)
    if unknown:
        raise ConfigError(f"unknown checks {sorted(unknown)}; choose from {CHECK_NAMES}")
    obj_d = config.task.d
    seed = config.replication_seeds()[0]
    out = []
    for name in checks:
        if name == "q_enumeration":
            res = check_q_enumeration()
        elif name == "lemma1":
            res = check_lemma1(config.p, config.task.N, mc_rounds, seed)
        elif name == "quantizer":
            res = check_quantizer(config.uplink, seed=seed)
        elif name == "lemma2":
            res = check_lemma2(config, rounds)
        elif name == "lemma3":
            res = check_lemma3(config, rounds=rounds)
        elif name == "lemma4":
            if obj_d > MAX_ENUM_DIM:
                res = CheckResult("lemma4", True, details={"skipped": f"d={obj_d} too large to enumerate"})
            else:
                res = check_lemma4(config, seed=seed)
        elif name == "theorem1":
            res = check_theorem1(config)
        else:
            res = check_theorem2(config, Ks=sorted({min(1_000, config.K), config.K}))
        out.append(res.to_dict())
    return {
        "schema_version": 1,
        "code_version": __version__,
        "config_hash": config.hash(),
        "passed": all(c["passed"] for c in out),
        "checks": out,
    }


def report_schema() -> dict:
    path = resources.files("dzofl") / "schemas" / "validator_report.schema.json"
    return json.loads(path.read_text())


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` breaks the committed layout."""
    import jsonschema

    jsonschema.validate(report, report_schema())
