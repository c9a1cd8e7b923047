"""Round-by-round execution of the zero-order protocol and of the first-order
baseline.

One round of the zero-order protocol:

1. every device evaluates its loss at ``theta +- gamma_k * phi_k`` with one
   shared sample ``xi_{i,k}`` and forms the difference ``delta_i``;
2. each device uploads ``Q(delta_i)``;
3. the server rescales the received scalars by ``N/|S_k|`` (0 if none);
4. the server broadcasts ``Q(aggregate)`` over an error-free downlink;
5. every device sets ``g_k = phi_k * Q(aggregate)`` and
   ``theta <- theta - alpha_k * g_k``.

All randomness is drawn from counter-based streams addressed by the round
index, so a run is a pure function of its configuration and seed, and a
checkpoint only needs ``(theta, k, ledger)``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import ErasureChannel, aggregate_masked, received_mask
from .config import RunConfig
from .costmodel import CostLedger, CostParams, e_bp, e_fp
from .errors import DZOFLError, TaskError
from .perturbation import PerturbationStream, moments, phi
from .quantizer import QuantizerSpec, certified_sigma, stochastic_round
from .schedule import StepSchedule, alpha, gamma
from .streams import CounterStream
from .tasks import DeviceTask, Objective
from .theory import RateBoundInputs, TheoryConstants, constants, rate_bound_terms

CSV_COLUMNS = (
    "k",
    "received",
    "delta_f",
    "g_norm_sq",
    "grad_norm_sq",
    "f_value",
    "uplink_bits",
    "downlink_bits",
    "cum_uplink_bits",
    "cum_uplink_attempted_bits",
    "cum_downlink_bits",
    "cum_energy_j",
    "cum_time_s",
)


@dataclass(frozen=True)
class RoundRecord:
    k: int
    received: int
    delta_f: float
    g_norm_sq: float
    grad_norm_sq: float
    f_value: float
    uplink_bits: int
    downlink_bits: int
    cum_uplink_bits: int
    cum_uplink_attempted_bits: int
    cum_downlink_bits: int
    cum_energy_j: float
    cum_time_s: float

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class TrainState:
    theta: np.ndarray
    k: int = 0
    ledger: CostLedger = field(default_factory=CostLedger)
    underflows: int = 0

    def to_dict(self) -> dict:
        # Python floats survive a JSON round trip exactly
        return {
            "theta": [float(v) for v in self.theta],
            "k": self.k,
            "ledger": self.ledger.to_dict(),
            "underflows": self.underflows,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainState":
        return cls(
            theta=np.array(data["theta"], dtype=np.float64),
            k=int(data["k"]),
            ledger=CostLedger.from_dict(data["ledger"]),
            underflows=int(data.get("underflows", 0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TrainState":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Setup:
    """Everything a round needs, resolved from a config and one seed."""

    objective: Objective
    schedule: StepSchedule
    perturbation: PerturbationStream
    channel: ErasureChannel
    quant_stream: CounterStream
    xi_stream: CounterStream
    uplink: QuantizerSpec
    downlink: QuantizerSpec
    cost: CostParams
    method: str = "dzofl"
    log_every: int = 1

    @classmethod
    def from_config(cls, config: RunConfig, seed: int | None = None, objective: Objective | None = None):
        seed = config.replication_seeds()[0] if seed is None else seed
        obj = config.task.build() if objective is None else objective
        return cls(
            objective=obj,
            schedule=config.schedule,
            perturbation=PerturbationStream(seed, obj.d),
            channel=ErasureChannel(config.p, obj.N, seed),
            quant_stream=CounterStream(seed, "quantizer"),
            xi_stream=CounterStream(seed, "xi"),
            uplink=config.uplink,
            downlink=config.downlink,
            cost=config.cost,
            method=config.method,
            log_every=config.effective_log_every,
        )

    def initial_state(self) -> TrainState:
        return TrainState(theta=self.objective.theta0.copy())

    def theory_constants(self) -> TheoryConstants:
        a2, a3 = moments(self.perturbation)
        sigma = max(certified_sigma(self.uplink), certified_sigma(self.downlink))
        obj = self.objective
        return constants(self.channel.p, obj.N, obj.alpha1, a2, a3, sigma, obj.L_xi, obj.L)

    def stream_seeds(self) -> dict:
        return {
            s.tag: {"seed": s.seed, "key": int(s.key)}
            for s in (self.perturbation.counter, self.channel.counter, self.quant_stream, self.xi_stream)
        }


def _xi(setup: Setup, ks: np.ndarray):
    obj = setup.objective
    u = setup.xi_stream.uniform(ks, obj.N * obj.xi_width)
    return obj.make_xi(u.reshape(ks.shape + (obj.N, obj.xi_width)))


def device_delta(task: DeviceTask, theta, gamma_k: float, phi_k, xi) -> float:
    """Loss difference of one device at ``theta +- gamma_k phi_k`` under one sample."""
    theta = np.asarray(theta, dtype=np.float64)
    plus = task.loss(theta + gamma_k * np.asarray(phi_k), xi)
    minus = task.loss(theta - gamma_k * np.asarray(phi_k), xi)
    delta = plus - minus
    if not np.all(np.isfinite(delta)):
        raise TaskError(f"device {task.device_id}: non-finite loss at theta={theta.tolist()}")
    return float(delta)


@dataclass(frozen=True)
class ZOBatch:
    """One or many rounds of the zero-order protocol at a fixed model."""

    phi: np.ndarray  # (R, d)
    deltas: np.ndarray  # (R, N)
    uploaded: np.ndarray  # (R, N)
    mask: np.ndarray  # (R, N)
    aggregate: np.ndarray  # (R,)
    broadcast: np.ndarray  # (R,)
    g: np.ndarray  # (R, d)
    underflows: int


@dataclass(frozen=True)
class RoundDraws:
    """Model-independent randomness of a block of rounds."""

    ks: np.ndarray  # (R,)
    phi: np.ndarray  # (R, d)
    xi: np.ndarray  # (R, N, ...)
    u: np.ndarray  # (R, N + 1) quantizer uniforms
    mask: np.ndarray  # (R, N)

    def take(self, i: int) -> "RoundDraws":
        sl = slice(i, i + 1)
        return RoundDraws(self.ks[sl], self.phi[sl], self.xi[sl], self.u[sl], self.mask[sl])


def draw_rounds(setup: Setup, ks) -> RoundDraws:
    """Everything random about rounds ``ks`` that does not depend on the model."""
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    return RoundDraws(ks, phi(setup.perturbation, ks), _xi(setup, ks),
                      setup.quant_stream.uniform(ks, setup.objective.N + 1),
                      received_mask(setup.channel, ks))


def zo_batch(setup: Setup, theta, gamma_k: float, ks, draws: RoundDraws | None = None) -> ZOBatch:
    """Run the query/upload/aggregate/broadcast steps for rounds ``ks``.

    ``theta`` is held fixed across the batch (the engine passes one round at a
    time; validators pass many rounds at a frozen model). Pre-drawn randomness
    for exactly these rounds may be passed as ``draws``.
    """
    obj = setup.objective
    if draws is None:
        draws = draw_rounds(setup, ks)
    ks = draws.ks
    theta = np.asarray(theta, dtype=np.float64)
    dirs = draws.phi
    xi = draws.xi
    deltas = obj.sample_losses(theta + gamma_k * dirs, xi) - obj.sample_losses(theta - gamma_k * dirs, xi)
    if not np.all(np.isfinite(deltas)):
        bad = int(ks[np.flatnonzero(~np.isfinite(deltas).all(axis=1))[0]])
        raise TaskError(f"non-finite loss difference in round {bad}")
    u = draws.u
    uploaded, under_up = stochastic_round(setup.uplink, deltas, u[:, : obj.N])
    mask = draws.mask
    agg = aggregate_masked(uploaded, mask, obj.N)
    broadcast, under_down = stochastic_round(setup.downlink, agg, u[:, obj.N])
    return ZOBatch(dirs, deltas, uploaded, mask, agg, broadcast, dirs * broadcast[:, None],
                   under_up + under_down)


def _record(setup: Setup, state: TrainState, theta_k, received, delta_f, g, up_bits, down_bits):
    obj = setup.objective
    logged = state.k % setup.log_every == 0
    if logged:
        grad = obj.grad(theta_k)
        grad_sq = float(grad @ grad)
        f_val = float(obj.value(theta_k))
    else:
        grad_sq = f_val = math.nan
    led = state.ledger
    return RoundRecord(
        k=state.k,
        received=int(received),
        delta_f=float(delta_f),
        g_norm_sq=float(g @ g),
        grad_norm_sq=grad_sq,
        f_value=f_val,
        uplink_bits=int(up_bits),
        downlink_bits=int(down_bits),
        cum_uplink_bits=led.uplink_bits,
        cum_uplink_attempted_bits=led.uplink_attempted_bits,
        cum_downlink_bits=led.downlink_bits,
        cum_energy_j=led.energy,
        cum_time_s=led.time,
    )


def _as_setup(config_or_setup) -> Setup:
    if isinstance(config_or_setup, Setup):
        return config_or_setup
    return Setup.from_config(config_or_setup)


def dzofl_round(state: TrainState, config, draws: RoundDraws | None = None) -> tuple[TrainState, RoundRecord]:
    """Advance one round of the zero-order protocol."""
    setup = _as_setup(config)
    obj = setup.objective
    k = state.k
    a_k = float(alpha(setup.schedule, k))
    g_k = float(gamma(setup.schedule, k))
    if draws is not None and int(draws.ks[0]) != k:
        raise ValueError(f"draws are for round {int(draws.ks[0])}, state is at round {k}")
    batch = zo_batch(setup, state.theta, g_k, [k], draws)
    g = batch.g[0]
    theta_next = state.theta - a_k * g
    # every device applies the same broadcast scalar to the same direction
    device_models = state.theta[None, :] - a_k * (batch.phi[0][None, :] * batch.broadcast[0])
    if not (device_models == theta_next).all():
        raise DZOFLError(f"device models diverged in round {k}")
    if not np.all(np.isfinite(theta_next)):
        raise TaskError(f"model became non-finite in round {k}")
    received = int(batch.mask[0].sum())
    ledger = replace(state.ledger)
    ledger.charge("dzofl", setup.cost, obj.N, setup.uplink.M, received, setup.downlink.M,
                  fp=_energy(setup)[0])
    new_state = TrainState(theta_next, k + 1, ledger, state.underflows + batch.underflows)
    rec = _record(setup, TrainState(state.theta, k, ledger), state.theta, received,
                  batch.aggregate[0], g, received * setup.uplink.M, setup.downlink.M)
    return new_state, rec


def baseline_round(state: TrainState, config, draws=None) -> tuple[TrainState, RoundRecord]:
    """Advance one round of quantized first-order federated gradient descent."""
    setup = _as_setup(config)
    obj = setup.objective
    k = state.k
    d, N = obj.d, obj.N
    a_k = float(alpha(setup.schedule, k))
    ks = np.array([k])
    xi = _xi(setup, ks)
    grads = obj.sample_grads(state.theta, xi[0])
    if not np.all(np.isfinite(grads)):
        raise TaskError(f"non-finite local gradient in round {k}")
    u = setup.quant_stream.uniform(k, N * d + d)
    uploaded, under_up = stochastic_round(setup.uplink, grads, u[: N * d].reshape(N, d))
    mask = received_mask(setup.channel, k)
    agg = aggregate_masked(uploaded, mask, N)
    broadcast, under_down = stochastic_round(setup.downlink, agg, u[N * d:])
    theta_next = state.theta - a_k * broadcast
    if not np.all(np.isfinite(theta_next)):
        raise TaskError(f"model became non-finite in round {k}")
    received = int(mask.sum())
    ledger = replace(state.ledger)
    fp, bp = _energy(setup)
    ledger.charge("baseline", setup.cost, N, d * setup.uplink.M, received, d * setup.downlink.M,
                  fp=fp, bp=bp)
    new_state = TrainState(theta_next, k + 1, ledger, state.underflows + under_up + under_down)
    rec = _record(setup, TrainState(state.theta, k, ledger), state.theta, received, math.nan,
                  broadcast, received * d * setup.uplink.M, d * setup.downlink.M)
    return new_state, rec


_ENERGY_CACHE: dict = {}
DRAW_BLOCK = 512


def _energy(setup: Setup) -> tuple[float, float]:
    key = setup.cost
    if key not in _ENERGY_CACHE:
        _ENERGY_CACHE[key] = (e_fp(key), e_bp(key))
    return _ENERGY_CACHE[key]


class RunAborted(DZOFLError):
    """A round failed; ``records`` and ``state`` hold the progress made so far."""

    def __init__(self, message, records, state):
        super().__init__(message)
        self.records = records
        self.state = state


@dataclass
class RunResult:
    records: list[RoundRecord]
    state: TrainState
    seed: int
    setup: Setup

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def run(config: RunConfig, replication: int = 0, *, state: TrainState | None = None,
        until: int | None = None, checkpoint_path=None, objective: Objective | None = None) -> RunResult:
    """Execute rounds ``state.k .. K`` (or up to ``until`` exclusive) for one replication."""
    seed = config.replication_seeds()[replication]
    setup = Setup.from_config(config, seed, objective)
    state = setup.initial_state() if state is None else state
    step = dzofl_round if setup.method == "dzofl" else baseline_round
    stop = config.K + 1 if until is None else min(until, config.K + 1)
    records: list[RoundRecord] = []
    every = config.checkpoint_every
    block = None
    try:
        while state.k < stop:
            draws = None
            if setup.method == "dzofl":
                if block is None or state.k > block.ks[-1]:
                    block = draw_rounds(setup, np.arange(state.k, min(state.k + DRAW_BLOCK, stop)))
                draws = block.take(state.k - int(block.ks[0]))
            state, rec = step(state, setup, draws)
            if rec.k % setup.log_every == 0:
                records.append(rec)
            if checkpoint_path is not None and every and state.k % every == 0:
                state.save(checkpoint_path)
    except DZOFLError as exc:
        raise RunAborted(str(exc), records, state) from exc
    if checkpoint_path is not None:
        state.save(checkpoint_path)
    return RunResult(records, state, seed, setup)


def _run_one(args):
    config, replication = args
    return run(config, replication)


def run_replications(config: RunConfig, workers: int | None = 1) -> list[RunResult]:
    """Run every replication of ``config``; ``workers > 1`` uses a process pool.

    Replications are independent and seeded individually, so the results do
    not depend on the number of workers.
    """
    jobs = [(config, r) for r in range(config.replications)]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs))


def weighted_gradient_average(records: list[RoundRecord], schedule: StepSchedule) -> float:
    """``sum a_k g_k ||grad F(theta_k)||^2 / sum a_k g_k`` over the logged rounds."""
    ks = np.array([r.k for r in records])
    grads = np.array([r.grad_norm_sq for r in records])
    w = alpha(schedule, ks) * gamma(schedule, ks)
    return float((w * grads).sum() / w.sum())


def summarize(results: list[RunResult], config: RunConfig) -> dict:
    """Replication-averaged convergence figures and the rate bound when available."""
    setup = results[0].setup
    obj = setup.objective
    consts = setup.theory_constants()
    grads = np.mean([r.column("grad_norm_sq") for r in results], axis=0)
    ks = results[0].column("k")
    w = alpha(config.schedule, ks) * gamma(config.schedule, ks)
    summary = {
        "method": config.method,
        "replications": len(results),
        "K": config.K,
        "initial_grad_norm_sq": float(grads[0]),
        "final_grad_norm_sq": float(grads[-1]),
        "weighted_grad_average": float((w * grads).sum() / w.sum()),
        "final_f_value": float(np.mean([r.column("f_value")[-1] for r in results])),
        "underflows": int(sum(r.state.underflows for r in results)),
        "max_distance_from_start": float(max(
            np.linalg.norm(r.state.theta - obj.theta0) for r in results)),
    }
    if obj.known_minimum is None or config.schedule.upsilon3 > 1:
        summary["rate_bound"] = None
        summary["rate_bound_status"] = "unavailable: no known minimum for this task"
    else:
        delta0 = float(obj.value(obj.theta0)) - obj.known_minimum
        terms = rate_bound_terms(RateBoundInputs(delta0, config.schedule, config.K, consts))
        summary["rate_bound"] = terms["bound"]
        summary["rate_bound_terms"] = terms
        summary["delta0"] = delta0
        summary["rate_bound_status"] = "ok"
    led = [r.state.ledger for r in results]
    summary["ledger_mean"] = {
        key: float(np.mean([getattr(l, key) for l in led])) for key in asdict(led[0])
    }
    return summary


def manifest(config: RunConfig, results: list[RunResult], status: str = "ok", error: str | None = None) -> dict:
    setup = results[0].setup if results else Setup.from_config(config)
    return {
        "code_version": __version__,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "status": status,
        "error": error,
        "replication_seeds": config.replication_seeds(),
        "streams": {str(r.seed): r.setup.stream_seeds() for r in results} if results else {},
        "stream_key_scheme": "splitmix64(seed, crc32(tag), k, j)",
        "quantizer": {"uplink": setup.uplink.layout(), "downlink": setup.downlink.layout(),
                      "note": "mantissa layout and sigma are simulator choices"},
        "theory_constants": setup.theory_constants().to_dict(),
        "task": {**setup.objective.describe(),
                 "note": "synthetic seeded data; a stand-in for real device datasets"},
        "csv_columns": list(CSV_COLUMNS),
        "cost_params": config.cost.to_dict(),
    }
