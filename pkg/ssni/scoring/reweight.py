"""
Reweighting - maps a sample's score norm to its own noise level.

Each rule turns a norm into an integer level in ``[0, T]``, scaled by the clean
calibration statistics. ``plan_for_batch`` applies a rule row by row and returns
the levels as a ``NoisePlan``.
"""

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..errors import ConfigError, NonFiniteError, RangeError
from ..utils.logger import get_logger
from .eps import ReweightStats

logger = get_logger("scoring.reweight")

ReweightKind = Literal["constant", "linear", "sigmoid"]


class ReweightSpec(BaseModel):
    """Reweighting function choice with its shared level ``t_star``, bias ``b`` and temperature ``tau``."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ReweightKind = "sigmoid"
    t_star: int = Field(default=100, ge=0)
    b: float = Field(default=0.0, ge=0)
    tau: float = 20.0

    @field_validator("tau")
    @classmethod
    def positive_tau(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("tau must be > 0")
        return v

    @classmethod
    def constant(cls, t_star: int) -> "ReweightSpec":
        return cls(kind="constant", t_star=t_star)

    @property
    def sample_specific(self) -> bool:
        return self.kind != "constant"


@dataclass(frozen=True)
class NoisePlan:
    """Per-row integer noise levels for one batch."""

    levels: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        if any(v < 0 for v in self.levels):
            raise RangeError("noise levels must be non-negative")

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]

    @classmethod
    def constant(cls, level: int, n: int) -> "NoisePlan":
        return cls((int(level),) * n)

    @property
    def max_level(self) -> int:
        return max(self.levels, default=0)

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor(self.levels, dtype=torch.long)

    def check(self, T: int) -> "NoisePlan":
        if self.levels and self.max_level > T:
            raise RangeError(f"plan level {self.max_level} exceeds T={T}")
        return self

    def take(self, rows: Sequence[int]) -> "NoisePlan":
        return NoisePlan(tuple(self.levels[r] for r in rows))


def _clamp_round(value: float, T: int) -> int:
    # Python round() is nearest with ties to even.
    return min(max(int(round(value)), 0), int(T))


def reweight_linear(norm: float, stats: ReweightStats, spec: ReweightSpec, T: int) -> int:
    xi_min = min(norm, stats.min)
    xi_max = max(norm, stats.max)
    if xi_max == xi_min:
        return _clamp_round(spec.b, T)
    return _clamp_round((norm - xi_min) / (xi_max - xi_min) * spec.t_star + spec.b, T)


def reweight_sigmoid(norm: float, stats: ReweightStats, spec: ReweightSpec, T: int) -> int:
    if not spec.tau > 0:
        raise ConfigError("tau must be > 0")
    z = (norm - stats.mean) / spec.tau
    # Stable logistic for both tails.
    if z >= 0:
        weight = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        weight = e / (1.0 + e)
    return _clamp_round((spec.t_star + spec.b) * weight, T)


def reweight_constant(spec: ReweightSpec, T: Optional[int] = None) -> int:
    return spec.t_star if T is None else min(spec.t_star, int(T))


def plan_for_batch(norms: Sequence[float], stats: ReweightStats, spec: ReweightSpec, T: int) -> NoisePlan:
    """Apply the spec's reweighting function row by row."""
    values = np.asarray(norms, dtype=np.float64).reshape(-1)
    if spec.kind == "constant":
        return NoisePlan.constant(reweight_constant(spec, T), values.shape[0])
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NonFiniteError(f"non-finite norm at row {int(bad[0])}")
    fn = reweight_linear if spec.kind == "linear" else reweight_sigmoid
    plan = NoisePlan(tuple(fn(float(v), stats, spec, T) for v in values))
    logger.debug("Noise plan built", kind=spec.kind, n=len(plan), max_level=plan.max_level)
    return plan
