"""Single reverse-diffusion updates: ancestral DDPM (optionally respaced), DDIM and guided DDPM."""

import math
from typing import Optional

import torch

from ..diffusion.nets import Denoiser
from ..diffusion.schedule import NoiseSchedule
from ..errors import RangeError


def _step_bounds(t: int, t_prev: Optional[int], schedule: NoiseSchedule):
    t = schedule.check_level(t, lowest=1)
    t_prev = t - 1 if t_prev is None else schedule.check_level(t_prev)
    if t_prev >= t:
        raise RangeError(f"t_prev {t_prev} must be below t {t}")
    return t, t_prev


def _step_beta(t: int, t_prev: int, schedule: NoiseSchedule) -> float:
    if t_prev == t - 1:
        return float(schedule.betas[t - 1])
    # Respaced variance for a stride of t - t_prev.
    return 1.0 - float(schedule.alpha_bars[t] / schedule.alpha_bars[t_prev])


def _ddpm_mean(x_t: torch.Tensor, eps_hat: torch.Tensor, t: int, beta: float, schedule: NoiseSchedule) -> torch.Tensor:
    coef = beta / math.sqrt(1.0 - float(schedule.alpha_bars[t]))
    return (x_t - coef * eps_hat) / math.sqrt(1.0 - beta)


def ddpm_reverse_step(
    d: Denoiser,
    x_t: torch.Tensor,
    t: int,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    t_prev: Optional[int] = None,
    eps_hat: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """One ancestral update from ``t`` to ``t_prev`` (default ``t - 1``); no noise is added when landing on 0."""
    t, t_prev = _step_bounds(t, t_prev, schedule)
    if eps_hat is None:
        eps_hat = d.evaluate(x_t, t)
    beta = _step_beta(t, t_prev, schedule)
    mean = _ddpm_mean(x_t, eps_hat, t, beta, schedule)
    if t_prev == 0:
        return mean
    return mean + math.sqrt(beta) * noise


def ddim_reverse_step(
    d: Denoiser,
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eps_hat: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t_prev``."""
    t, t_prev = _step_bounds(t, t_prev, schedule)
    if eps_hat is None:
        eps_hat = d.evaluate(x_t, t)
    alpha_bar = float(schedule.alpha_bars[t])
    alpha_bar_prev = float(schedule.alpha_bars[t_prev])
    x0_hat = (x_t - math.sqrt(1.0 - alpha_bar) * eps_hat) / math.sqrt(alpha_bar)
    if t_prev == 0:
        return x0_hat
    return math.sqrt(alpha_bar_prev) * x0_hat + math.sqrt(1.0 - alpha_bar_prev) * eps_hat


def guided_reverse_step(
    d: Denoiser,
    x_t: torch.Tensor,
    t: int,
    x_ref_t: torch.Tensor,
    scale: float,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    t_prev: Optional[int] = None,
    eps_hat: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """DDPM update whose mean is pulled toward ``x_ref_t`` by ``scale * sigma_t^2 * grad ||x_t - x_ref_t||^2``."""
    if scale < 0:
        raise ValueError("guidance scale must be >= 0")
    t, t_prev = _step_bounds(t, t_prev, schedule)
    if eps_hat is None:
        eps_hat = d.evaluate(x_t, t)
    beta = _step_beta(t, t_prev, schedule)
    mean = _ddpm_mean(x_t, eps_hat, t, beta, schedule)
    if scale:
        mean = mean - scale * beta * 2.0 * (x_t - x_ref_t)
    if t_prev == 0:
        return mean
    return mean + math.sqrt(beta) * noise
