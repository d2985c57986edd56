"""Denoiser training with the ε-prediction objective."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from ..errors import TrainingDivergedError
from ..utils.logger import get_logger, log_training_step
from ..utils.rng import SPLIT_DOMAIN, derive_seed, make_generator
from .nets import Denoiser, default_denoiser
from .schedule import NoiseSchedule, forward_diffuse_batch

logger = get_logger("diffusion.training")


class DenoiserHyper(BaseModel):
    """Training record for ``train_denoiser``."""
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    holdout_fraction: float = Field(default=0.1, gt=0, lt=1)
    eval_every: int = Field(default=100, ge=1)
    arch: Optional[str] = None
    hidden: int = Field(default=128, ge=1)
    n_blocks: int = Field(default=3, ge=1)
    base_channels: int = Field(default=16, ge=1)


@dataclass
class TrainingResult:
    model: Denoiser
    init_loss: float
    final_loss: float
    history: List[float] = field(default_factory=list)
    heldout_history: List[float] = field(default_factory=list)


def split_holdout(n: int, fraction: float, seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Fixed train/held-out index split (held-out gets ``ceil(fraction * n)`` rows, at least one)."""
    order = torch.randperm(n, generator=make_generator(seed, SPLIT_DOMAIN))
    n_hold = min(max(1, math.ceil(fraction * n)), n - 1) if n > 1 else 0
    return order[n_hold:], order[:n_hold]


def _objective(model: Denoiser, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor, schedule: NoiseSchedule):
    x_t = forward_diffuse_batch(x0, t, noise, schedule)
    return F.mse_loss(model.evaluate(x_t, t), noise)


def _build_model(shape, schedule: NoiseSchedule, hyper: DenoiserHyper) -> Denoiser:
    from .nets import ResidualMLPDenoiser, TinyUNetDenoiser

    if len(shape) == 1:
        return ResidualMLPDenoiser(shape[0], schedule.T, hidden=hyper.hidden, n_blocks=hyper.n_blocks)
    if len(shape) == 3:
        return TinyUNetDenoiser(shape[0], shape[1], schedule.T, base=hyper.base_channels)
    return default_denoiser(tuple(shape), schedule.T)


def train_denoiser(
    dataset: Union[torch.Tensor, "object"],
    schedule: NoiseSchedule,
    hyper: DenoiserHyper,
    rng_seed: int,
    model: Optional[Denoiser] = None,
) -> TrainingResult:
    """Fit ε_φ by minimising ‖ε − ε_φ(√ᾱ_t x₀ + √(1−ᾱ_t) ε, t)‖², t ~ U{1..T}."""
    x = dataset if isinstance(dataset, torch.Tensor) else dataset.x
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(rng_seed))
        if model is None:
            model = _build_model(tuple(x.shape[1:]), schedule, hyper)
    model = model.to(dtype=x.dtype)

    train_idx, hold_idx = split_holdout(x.shape[0], hyper.holdout_fraction, rng_seed)
    if hold_idx.numel() == 0:
        hold_idx = train_idx
    x_train, x_hold = x[train_idx], x[hold_idx]

    # Fixed held-out draws so every evaluation scores the same objective.
    hold_gen = make_generator(rng_seed, SPLIT_DOMAIN, 1)
    hold_t = torch.randint(1, schedule.T + 1, (x_hold.shape[0],), generator=hold_gen)
    hold_noise = torch.randn(x_hold.shape, generator=hold_gen, dtype=x.dtype)

    def heldout() -> float:
        model.eval()
        with torch.no_grad():
            return float(_objective(model, x_hold, hold_t, hold_noise, schedule))

    init_loss = heldout()
    result = TrainingResult(model=model, init_loss=init_loss, final_loss=init_loss, heldout_history=[init_loss])
    logger.info("Training denoiser", arch=model.arch, steps=hyper.steps, n_train=len(train_idx), init_loss=init_loss)

    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.learning_rate)
    gen = make_generator(rng_seed, SPLIT_DOMAIN, 2)
    for step in range(1, hyper.steps + 1):
        model.train()
        idx = torch.randint(0, x_train.shape[0], (hyper.batch_size,), generator=gen)
        t = torch.randint(1, schedule.T + 1, (hyper.batch_size,), generator=gen)
        noise = torch.randn((hyper.batch_size, *x.shape[1:]), generator=gen, dtype=x.dtype)
        loss = _objective(model, x_train[idx], t, noise, schedule)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"denoiser loss became non-finite at step {step}: {float(loss)}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.history.append(float(loss))

        if step % hyper.eval_every == 0 or step == hyper.steps:
            held = heldout()
            result.heldout_history.append(held)
            log_training_step("denoiser", step, float(loss), heldout=held)

    if hyper.steps > 0:
        result.final_loss = heldout()
    model.eval()
    logger.info("Denoiser trained", init_loss=result.init_loss, final_loss=result.final_loss)
    return result
