"""Communication, convergence-time and device energy accounting.

Energies are in joules, times in seconds, sizes in bits. The defaults of
:class:`CostParams` describe the two-layer CNN workload used for the
comparison figures (binary FashionMNIST, batch 10) and a 10 Mbit/s uplink.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

METHODS = ("dzofl", "baseline")
PICO = 1e-12
SRAM_BITS_8MB = 8 * 2**20 * 8


@dataclass(frozen=True)
class CostParams:
    A: float = 3.7  # MAC energy scale, picojoules
    mu: float = 1.25
    M: int = 16
    M_max: int = 32
    N_c: float = 10.56e6
    O_c: float = 250420
    d: int = 45362
    A_d: float = 150.0
    p_u: int = 64  # MAC units
    S: float = SRAM_BITS_8MB
    x_in: float = 784
    bit_rate: float = 10e6
    slot: float = 0.125e-3
    cpu_rate: float = 4e9
    op_count: float = 16e6
    tx_power: float = 0.2

    def __post_init__(self):
        if not 1 < self.mu < 2:
            raise ConfigError(f"MAC energy exponent must satisfy 1<μ<2, got {self.mu}")
        if not 0 < self.M <= self.M_max:
            raise ConfigError(f"precision must satisfy 0<M≤M_max, got M={self.M}, M_max={self.M_max}")
        for f in fields(self):
            if f.name in ("op_count", "tx_power"):
                if getattr(self, f.name) < 0:
                    raise ConfigError(f"{f.name} must be nonnegative")
            elif not getattr(self, f.name) > 0:
                raise ConfigError(f"{f.name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def compute_time(self) -> float:
        """Seconds of local computation per round."""
        return self.op_count / self.cpu_rate


def e_mac(cp: CostParams, M: float) -> float:
    """Energy of one multiply-accumulate at ``M``-bit precision."""
    if not 0 < M <= cp.M_max:
        raise ConfigError(f"MAC precision must satisfy 0<M≤{cp.M_max}, got {M}")
    return cp.A * PICO * (M / cp.M_max) ** cp.mu


def fp_components(cp: CostParams) -> dict[str, float]:
    e_m = e_mac(cp, cp.M)
    e_max = e_mac(cp, cp.M_max)
    buffer_share = cp.N_c * math.sqrt(cp.M / (cp.p_u * cp.M_max))
    return {
        "computing": e_m * cp.N_c + 3 * cp.O_c * e_max,
        "weights": 2 * e_m * cp.d + e_m * buffer_share,
        "activations": 2 * e_m * cp.O_c + e_m * buffer_share,
        "dram": cp.A_d * e_max * cp.x_in
        + 2 * cp.A_d * e_m * max(cp.d * cp.M + cp.O_c * cp.M - cp.S, 0.0),
    }


def e_fp(cp: CostParams) -> float:
    """Forward-propagation energy per device per round."""
    return sum(fp_components(cp).values())


def e_bp(cp: CostParams) -> float:
    """Backward-propagation energy per device per round (full precision only)."""
    e_max = e_mac(cp, cp.M_max)
    return (
        2 * cp.N_c * e_max
        + 2 * cp.O_c * e_max
        + cp.d * e_max
        + 2 * cp.N_c * e_max * math.sqrt(1.0 / cp.p_u)
        + 2 * cp.A_d * e_max * max(cp.d * cp.M_max + cp.O_c * cp.M_max - cp.S, 0.0)
    )


def _check_method(method: str):
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")


def comm_totals(method: str, T: int, N: int, M: int, d: int) -> int:
    """Total uplink bits over ``T`` rounds for all ``N`` devices."""
    _check_method(method)
    if min(T, N, M, d) < 0:
        raise ConfigError("arguments must be nonnegative")
    if method == "dzofl":
        return T * N * M
    return T * N * M * d


def round_time(method: str, cp: CostParams, payload_bits: float) -> float:
    _check_method(method)
    if method == "dzofl":
        return cp.slot + cp.compute_time
    return payload_bits / cp.bit_rate + cp.compute_time


def convergence_time(method: str, T: int, cp: CostParams, per_round_payload_bits: float = 0.0) -> float:
    """Wall time for ``T`` rounds; devices upload in parallel on their own links."""
    return T * round_time(method, cp, per_round_payload_bits)


def tx_energy(cp: CostParams, bits: float) -> float:
    return cp.tx_power * bits / cp.bit_rate


def total_energy(method: str, T: int, cp: CostParams, bits: float) -> float:
    """Device energy for ``T`` rounds plus the transmission of ``bits``."""
    _check_method(method)
    per_round = e_fp(cp) if method == "dzofl" else e_fp(cp) + e_bp(cp)
    return T * per_round + tx_energy(cp, bits)


@dataclass
class CostLedger:
    """Cumulative fleet-wide costs of a run."""

    uplink_bits: int = 0
    uplink_attempted_bits: int = 0
    downlink_bits: int = 0
    fp_energy: float = 0.0
    bp_energy: float = 0.0
    tx_energy: float = 0.0
    comm_time: float = 0.0
    compute_time: float = 0.0

    @property
    def energy(self) -> float:
        return self.fp_energy + self.bp_energy + self.tx_energy

    @property
    def time(self) -> float:
        return self.comm_time + self.compute_time

    def charge(self, method: str, cp: CostParams, N: int, payload_bits: int,
               delivered: int, downlink_bits: int, fp=None, bp=None) -> None:
        """Add one round. ``payload_bits`` is one device's upload; every device
        transmits it, ``delivered`` of them get through."""
        _check_method(method)
        attempted = N * payload_bits
        self.uplink_bits += delivered * payload_bits
        self.uplink_attempted_bits += attempted
        self.downlink_bits += downlink_bits
        self.fp_energy += N * (e_fp(cp) if fp is None else fp)
        if method == "baseline":
            self.bp_energy += N * (e_bp(cp) if bp is None else bp)
        self.tx_energy += tx_energy(cp, attempted)
        self.comm_time += cp.slot if method == "dzofl" else payload_bits / cp.bit_rate
        self.compute_time += cp.compute_time

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CostLedger":
        return cls(**data)


def compare(cp: CostParams, T: int, T_prime: int, N: int = 1, d: int | None = None) -> dict:
    """DZOFL over ``T`` rounds against the first-order baseline over ``T_prime``."""
    d = cp.d if d is None else d
    report = {}
    for method, rounds in (("dzofl", T), ("baseline", T_prime)):
        bits = comm_totals(method, rounds, N, cp.M, d)
        payload = cp.M if method == "dzofl" else cp.M * d
        report[method] = {
            "rounds": rounds,
            "uplink_bits": bits,
            "uplink_bits_per_device": bits // N if N else 0,
            "convergence_time_s": convergence_time(method, rounds, cp, payload),
            "upload_time_s": rounds * (cp.slot if method == "dzofl" else payload / cp.bit_rate),
            "energy_j": N * total_energy(method, rounds, cp, bits / N if N else 0),
        }
    report["ratios"] = {
        "uplink_bits": report["baseline"]["uplink_bits"] / max(report["dzofl"]["uplink_bits"], 1),
        "energy": report["baseline"]["energy_j"] / report["dzofl"]["energy_j"],
        "time": report["baseline"]["convergence_time_s"] / report["dzofl"]["convergence_time_s"],
    }
    report["e_fp_j"] = e_fp(cp)
    report["e_bp_j"] = e_bp(cp)
    return report
