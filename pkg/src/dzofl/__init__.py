"""Simulator and analysis toolkit for digital zero-order federated learning."""

__version__ = "0.1.0"

from .channel import ErasureChannel, aggregate, q_success, sample_received_set  # noqa: E402
from .config import RunConfig, load_config, load_preset  # noqa: E402
from .costmodel import CostParams  # noqa: E402
from .engine import baseline_round, dzofl_round, run  # noqa: E402
from .perturbation import PerturbationStream, moments, phi  # noqa: E402
from .quantizer import QuantizerSpec, certified_sigma, quantize  # noqa: E402
from .schedule import StepSchedule, validate_exponents  # noqa: E402
from .tasks import (  # noqa: E402
    make_logistic_task,
    make_nonconvex_task,
    make_quadratic_task,
    true_gradient_norm_sq,
)
from .theory import bias_oracle, constants, partial_sum_bounds, rate_bound  # noqa: E402

__all__ = [
    "CostParams",
    "ErasureChannel",
    "PerturbationStream",
    "QuantizerSpec",
    "RunConfig",
    "StepSchedule",
    "aggregate",
    "baseline_round",
    "bias_oracle",
    "certified_sigma",
    "constants",
    "dzofl_round",
    "load_config",
    "load_preset",
    "make_logistic_task",
    "make_nonconvex_task",
    "make_quadratic_task",
    "moments",
    "partial_sum_bounds",
    "phi",
    "q_success",
    "quantize",
    "rate_bound",
    "run",
    "sample_received_set",
    "true_gradient_norm_sq",
    "validate_exponents",
]
