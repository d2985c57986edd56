"""
Purification - diffuse each row to its own level, then reverse to t = 0.

Rows sharing a current timestep are updated together; a row whose level is 0
is never touched, so it comes back bit-identical to its input.
"""

import math
import time
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..diffusion.nets import Denoiser
from ..diffusion.schedule import NoiseSchedule, forward_diffuse, forward_diffuse_batch
from ..errors import ConfigError, ShapeMismatchError
from ..scoring.reweight import NoisePlan
from ..utils.logger import get_logger
from ..utils.rng import FORWARD_DOMAIN, REVERSE_DOMAIN, NoiseStreams
from .samplers import ddim_reverse_step, ddpm_reverse_step, guided_reverse_step

logger = get_logger("purification")


class RunSetting(BaseModel):
    """One purification run: where its level comes from and how strongly it is guided."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    level: Union[Literal["plan"], int] = "plan"
    guidance_scale: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def check_level(self):
        if self.level != "plan" and int(self.level) < 0:
            raise ValueError("fixed run level must be >= 0")
        return self


class PurifierConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sampler: Literal["ddpm", "ddim"] = "ddpm"
    reverse_steps: Union[Literal["full"], int] = "full"
    runs: List[RunSetting] = Field(default_factory=lambda: [RunSetting()], min_length=1)

    @model_validator(mode="after")
    def check_runs(self):
        if self.reverse_steps != "full" and int(self.reverse_steps) < 1:
            raise ValueError("reverse_steps stride must be >= 1")
        if self.sampler == "ddim" and any(run.guidance_scale > 0 for run in self.runs):
            raise ValueError("guidance is only defined for the ddpm sampler")
        return self

    @property
    def stride(self) -> int:
        return 1 if self.reverse_steps == "full" else int(self.reverse_steps)

    def with_stride(self, stride: int) -> "PurifierConfig":
        return self.model_copy(update={"reverse_steps": "full" if stride == 1 else int(stride)})

    def with_sampler(self, sampler: str) -> "PurifierConfig":
        return PurifierConfig(sampler=sampler, reverse_steps=self.reverse_steps, runs=self.runs)

    # Presets
    @classmethod
    def diffpure(cls, sampler: str = "ddpm", stride: int = 1) -> "PurifierConfig":
        """Single run at the planned level."""
        return cls(sampler=sampler, reverse_steps="full" if stride == 1 else stride, runs=[RunSetting()])

    @classmethod
    def gdmp(cls, n_runs: int = 4, level: Union[str, int] = "plan", guidance_scale: float = 0.0, stride: int = 1) -> "PurifierConfig":
        """Repeated runs at one level, optionally guided toward each run's input."""
        if n_runs < 1:
            raise ConfigError("gdmp needs at least one run")
        runs = [RunSetting(level=level, guidance_scale=guidance_scale) for _ in range(n_runs)]
        return cls(sampler="ddpm", reverse_steps="full" if stride == 1 else stride, runs=runs)

    @classmethod
    def gns(cls, levels: Sequence[Union[str, int]], sampler: str = "ddpm", stride: int = 1) -> "PurifierConfig":
        """Gradually increasing levels, one run each; a leading "plan" entry uses the sample-specific level."""
        fixed = [int(v) for v in levels if v != "plan"]
        if fixed != sorted(fixed):
            raise ConfigError("gns levels must be non-decreasing")
        return cls(sampler=sampler, reverse_steps="full" if stride == 1 else stride, runs=[RunSetting(level=v) for v in levels])


@dataclass
class PurifyTrace:
    """Per-row audit of one purify call."""

    levels: List[Tuple[int, ...]] = field(default_factory=list)
    calls: List[int] = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def run_count(self) -> int:
        return len(self.levels)


def reverse_calls(level: int, stride: int) -> int:
    """Denoiser calls needed to bring one row from ``level`` back to 0."""
    return math.ceil(int(level) / int(stride))


def _run_levels(run: RunSetting, plan: NoisePlan, n: int) -> Tuple[int, ...]:
    return plan.levels if run.level == "plan" else (int(run.level),) * n


def _reverse_rows(
    d: Denoiser,
    x_T: torch.Tensor,
    x_in: torch.Tensor,
    forward_noise: torch.Tensor,
    levels: torch.Tensor,
    schedule: NoiseSchedule,
    cfg: PurifierConfig,
    run: RunSetting,
    run_index: int,
    streams: NoiseStreams,
    calls: List[int],
) -> torch.Tensor:
    out = x_T
    current = levels.clone()
    stride = cfg.stride
    while bool((current > 0).any()):
        t = int(current.max())
        t_prev = max(t - stride, 0)
        rows = torch.nonzero(current == t).flatten()
        idx = rows.to(out.device)
        x_t = out.index_select(0, idx)
        if cfg.sampler == "ddim":
            updated = ddim_reverse_step(d, x_t, t, t_prev, schedule)
        else:
            noise = streams.normal(rows.tolist(), out.shape[1:], REVERSE_DOMAIN, run_index, t, dtype=out.dtype, device=out.device)
            if run.guidance_scale > 0:
                x_ref_t = forward_diffuse(x_in.index_select(0, idx), t, forward_noise.index_select(0, idx), schedule)
                updated = guided_reverse_step(d, x_t, t, x_ref_t, run.guidance_scale, noise, schedule, t_prev=t_prev)
            else:
                updated = ddpm_reverse_step(d, x_t, t, noise, schedule, t_prev=t_prev)
        out = out.index_copy(0, idx, updated)
        current[rows] = t_prev
        for r in rows.tolist():
            calls[r] += 1
    return out


def purify(
    x: torch.Tensor,
    plan: NoisePlan,
    d: Denoiser,
    schedule: NoiseSchedule,
    cfg: PurifierConfig,
    rng: NoiseStreams,
    trace: Optional[PurifyTrace] = None,
) -> torch.Tensor:
    """Run every configured purification run in sequence, each feeding the next.

    Forward noise for run ``r`` is keyed ``(FORWARD_DOMAIN, r)`` and reverse noise
    at timestep ``t`` is keyed ``(REVERSE_DOMAIN, r, t)``, both per row.
    """
    n = x.shape[0]
    if len(plan) != n:
        raise ShapeMismatchError(f"plan length {len(plan)} != batch size {n}")
    if len(rng) != n:
        raise ShapeMismatchError(f"{len(rng)} noise streams for {n} rows")
    plan.check(schedule.T)

    started = time.perf_counter()
    calls = [0] * n
    current = x
    for run_index, run in enumerate(cfg.runs):
        levels = _run_levels(run, plan, n)
        level_tensor = schedule.check_levels(torch.tensor(levels, dtype=torch.long))
        forward_noise = rng.normal(range(n), x.shape[1:], FORWARD_DOMAIN, run_index, dtype=x.dtype, device=x.device)
        x_T = forward_diffuse_batch(current, level_tensor, forward_noise, schedule)
        current = _reverse_rows(d, x_T, current, forward_noise, level_tensor, schedule, cfg, run, run_index, rng, calls)
        if trace is not None:
            trace.levels.append(tuple(levels))

    if trace is not None:
        trace.calls = calls
        trace.wall_seconds = time.perf_counter() - started
    logger.debug("Purified batch", n=n, runs=len(cfg.runs), sampler=cfg.sampler, stride=cfg.stride, max_level=plan.max_level)
    return current


def purify_shared(
    x: torch.Tensor,
    level: int,
    d: Denoiser,
    schedule: NoiseSchedule,
    cfg: PurifierConfig,
    rng: NoiseStreams,
) -> torch.Tensor:
    """Sample-shared baseline: one level for the whole batch, scalar schedule arithmetic throughout."""
    level = schedule.check_level(level)
    n = x.shape[0]
    current = x
    for run_index, run in enumerate(cfg.runs):
        t_run = level if run.level == "plan" else schedule.check_level(int(run.level))
        noise0 = rng.normal(range(n), x.shape[1:], FORWARD_DOMAIN, run_index, dtype=x.dtype, device=x.device)
        x_t = forward_diffuse(current, t_run, noise0, schedule)
        t = t_run
        while t > 0:
            t_prev = max(t - cfg.stride, 0)
            if cfg.sampler == "ddim":
                x_t = ddim_reverse_step(d, x_t, t, t_prev, schedule)
            else:
                noise = rng.normal(range(n), x.shape[1:], REVERSE_DOMAIN, run_index, t, dtype=x.dtype, device=x.device)
                if run.guidance_scale > 0:
                    x_ref_t = forward_diffuse(current, t, noise0, schedule)
                    x_t = guided_reverse_step(d, x_t, t, x_ref_t, run.guidance_scale, noise, schedule, t_prev=t_prev)
                else:
                    x_t = ddpm_reverse_step(d, x_t, t, noise, schedule, t_prev=t_prev)
            t = t_prev
        current = x_t
    return current
