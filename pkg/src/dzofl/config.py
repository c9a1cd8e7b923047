"""Run configuration: parsing, validation, serialization and presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .channel import ErasureChannel
from .costmodel import CostParams
from .errors import ConfigError
from .quantizer import QuantizerSpec
from .schedule import StepSchedule
from .tasks import TASKS

METHODS = ("dzofl", "baseline")


@dataclass(frozen=True)
class TaskConfig:
    kind: str = "quadratic"
    d: int = 10
    N: int = 5
    seed: int = 0
    params: dict = field(default_factory=dict)

    def build(self):
        from .tasks import build_task

        kwargs = dict(self.params)
        kwargs.update(d=self.d, N=self.N, seed=self.seed)
        try:
            return build_task(self.kind, **kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for task {self.kind!r}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    p: float = 1.0
    uplink: QuantizerSpec = field(default_factory=QuantizerSpec)
    downlink: QuantizerSpec = field(default_factory=QuantizerSpec)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    K: int = 1000
    method: str = "dzofl"
    seed: int = 0
    seed_offset: int = 0
    replications: int = 1
    seeds: tuple[int, ...] | None = None
    cost: CostParams = field(default_factory=CostParams)
    log_every: int | None = None
    checkpoint_every: int | None = None
    baseline_rounds: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task.kind not in TASKS:
            raise ConfigError(f"unknown task kind {self.task.kind!r}; choose from {sorted(TASKS)}")
        if self.task.d < 1 or self.task.N < 1:
            raise ConfigError("task needs d >= 1 and N >= 1")
        ErasureChannel(self.p, self.task.N)
        if not isinstance(self.K, int) or self.K < 0:
            raise ConfigError(f"horizon must satisfy K≥0, got {self.K}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.replications:
            raise ConfigError("explicit seed list must have one seed per replication")
        if self.log_every is not None and self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    @property
    def effective_log_every(self) -> int:
        if self.log_every is not None:
            return self.log_every
        return 1 if self.task.d <= 1000 else 10

    @property
    def T_prime(self) -> int:
        """Baseline round count used by cost comparisons (default: a tenth of K+1)."""
        if self.baseline_rounds is not None:
            return self.baseline_rounds
        return max((self.K + 1) // 10, 1)

    def replication_seeds(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + self.seed_offset + r for r in range(self.replications)]

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out = {
            "task": asdict(self.task),
            "channel": {"p": self.p},
            "quantizer": {"uplink": asdict(self.uplink), "downlink": asdict(self.downlink)},
            "schedule": asdict(self.schedule),
            "K": self.K,
            "method": self.method,
            "seed": self.seed,
            "seed_offset": self.seed_offset,
            "replications": self.replications,
            "seeds": list(self.seeds) if self.seeds is not None else None,
            "cost": self.cost.to_dict(),
            "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
            "baseline_rounds": self.baseline_rounds,
            "out_dir": self.out_dir,
        }
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = dict(data or {})
        known = {"task", "channel", "quantizer", "schedule", "K", "method", "seed", "seed_offset",
                 "replications", "seeds", "cost", "log_every", "checkpoint_every",
                 "baseline_rounds", "out_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        if "task" in data:
            kwargs["task"] = _build(TaskConfig, data["task"], "task")
        if "channel" in data:
            channel = dict(data["channel"] or {})
            extra = set(channel) - {"p"}
            if extra:
                raise ConfigError(f"unknown channel keys: {sorted(extra)}")
            if "p" in channel:
                kwargs["p"] = float(channel["p"])
        quant = dict(data.get("quantizer") or {})
        extra = set(quant) - {"uplink", "downlink"}
        if extra:
            raise ConfigError(f"unknown quantizer keys: {sorted(extra)}")
        if "uplink" in quant:
            kwargs["uplink"] = _build(QuantizerSpec, quant["uplink"], "quantizer.uplink")
        # the downlink reuses the uplink layout unless configured separately
        down = quant.get("downlink", quant.get("uplink"))
        if down is not None:
            kwargs["downlink"] = _build(QuantizerSpec, down, "quantizer.downlink")
        if "schedule" in data:
            kwargs["schedule"] = _build(StepSchedule, data["schedule"], "schedule")
        if "cost" in data:
            kwargs["cost"] = _build(CostParams, data["cost"], "cost")
        for key in ("K", "method", "seed", "seed_offset", "replications", "log_every",
                    "checkpoint_every", "baseline_rounds", "out_dir"):
            if key in data:
                kwargs[key] = data[key]
        if data.get("seeds") is not None:
            kwargs["seeds"] = tuple(int(s) for s in data["seeds"])
        return cls(**kwargs)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True)

    def hash(self) -> str:
        """Digest of everything that influences the results (not the output path)."""
        payload = self.to_dict()
        payload.pop("out_dir")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def _build(cls, data, section: str):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {section} section: {exc}") from None


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    return RunConfig.from_dict(data or {})


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return loads(text)


def preset_names() -> list[str]:
    root = resources.files("dzofl") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> RunConfig:
    path = resources.files("dzofl") / "presets" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
    return loads(path.read_text())
