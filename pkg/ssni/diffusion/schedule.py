"""Noise schedules and closed-form forward diffusion.

Schedule arithmetic is held in float64; tensors being diffused keep their own
dtype and the coefficients are cast at the point of use.
"""

from dataclasses import dataclass
from typing import Any, Dict, Sequence, Union

import torch

from ..errors import ConfigError, RangeError, ShapeMismatchError

Levels = Union["NoisePlanLike", Sequence[int], torch.Tensor]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Discrete variance-preserving schedule.

    ``betas[i]`` is β_{i+1}; ``alpha_bars[t]`` is ᾱ_t with ``alpha_bars[0] == 1``.
    """

    betas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    @classmethod
    def from_betas(cls, betas: Union[Sequence[float], torch.Tensor]) -> "NoiseSchedule":
        betas = torch.as_tensor(betas, dtype=torch.float64).flatten().clone()
        if betas.numel() < 1:
            raise ConfigError("schedule needs at least one step")
        if not bool(((betas > 0) & (betas < 1)).all()):
            raise ConfigError("every beta must lie strictly inside (0, 1)")
        alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - betas, dim=0)])
        return cls(betas=betas, alpha_bars=alpha_bars)

    def check_level(self, t: int, lowest: int = 0) -> int:
        t = int(t)
        if not lowest <= t <= self.T:
            raise RangeError(f"timestep {t} outside [{lowest}, {self.T}]")
        return t

    def check_levels(self, t: torch.Tensor, lowest: int = 0) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if t.numel() and (int(t.min()) < lowest or int(t.max()) > self.T):
            raise RangeError(f"levels must lie in [{lowest}, {self.T}], got [{int(t.min())}, {int(t.max())}]")
        return t

    def beta(self, t: int) -> float:
        return float(self.betas[self.check_level(t, lowest=1) - 1])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self.check_level(t)])

    def to_config(self) -> Dict[str, Any]:
        return {"betas": [float(b) for b in self.betas]}

    @classmethod
    def from_config(cls, payload: Dict[str, Any]) -> "NoiseSchedule":
        if payload.get("betas") is not None:
            return cls.from_betas(payload["betas"])
        return make_linear_schedule(payload["T"], payload["beta_start"], payload["beta_end"])


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T) != T or T < 1:
        raise ConfigError(f"T must be a positive integer, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.linspace(beta_start, beta_end, int(T), dtype=torch.float64)
    return NoiseSchedule.from_betas(betas)


def default_schedule() -> NoiseSchedule:
    return make_linear_schedule(1000, 1e-4, 0.02)


def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return coef.to(device=like.device, dtype=like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


def forward_diffuse(x0: torch.Tensor, t: int, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """√ᾱ_t·x0 + √(1−ᾱ_t)·noise for one shared level."""
    t = schedule.check_level(t)
    if noise.shape != x0.shape:
        raise ShapeMismatchError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    if t == 0:
        return x0.clone()
    alpha_bar = schedule.alpha_bars[t]
    signal = torch.sqrt(alpha_bar).to(device=x0.device, dtype=x0.dtype)
    spread = torch.sqrt(1.0 - alpha_bar).to(device=x0.device, dtype=x0.dtype)
    return signal * x0 + spread * noise


def forward_diffuse_batch(
    x0: torch.Tensor, plan: Levels, noise: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Row i diffused to ``plan[i]``; rows at level 0 are returned untouched."""
    levels = _levels_tensor(plan)
    if levels.dim() != 1 or levels.shape[0] != x0.shape[0]:
        raise ShapeMismatchError(f"plan length {levels.shape[0] if levels.dim() else 0} != batch size {x0.shape[0]}")
    if noise.shape != x0.shape:
        raise ShapeMismatchError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    levels = schedule.check_levels(levels)
    alpha_bar = schedule.alpha_bars[levels]
    signal = _broadcast(torch.sqrt(alpha_bar), x0)
    spread = _broadcast(torch.sqrt(1.0 - alpha_bar), x0)
    diffused = signal * x0 + spread * noise
    keep = (levels == 0).to(x0.device).reshape(-1, *([1] * (x0.dim() - 1)))
    return torch.where(keep, x0, diffused)


class NoisePlanLike:
    """Anything carrying a ``levels`` sequence (see ``scoring.reweight.NoisePlan``)."""

    levels: Sequence[int]


def _levels_tensor(plan: Levels) -> torch.Tensor:
    if isinstance(plan, torch.Tensor):
        return plan.detach().to("cpu", torch.long)
    levels = getattr(plan, "levels", plan)
    return torch.as_tensor(list(levels), dtype=torch.long)
