"""Score-norm statistics and the noise-level reweighting built on them."""

from .eps import EPSConfig, ReweightStats, calibrate_reference, eps_estimate, eps_norm_batch
from .reweight import NoisePlan, ReweightSpec, plan_for_batch

__all__ = [
    "EPSConfig",
    "NoisePlan",
    "ReweightSpec",
    "ReweightStats",
    "calibrate_reference",
    "eps_estimate",
    "eps_norm_batch",
    "plan_for_batch",
]
