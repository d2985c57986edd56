"""ε-prediction denoisers and the score estimators derived from them."""

import math
from abc import ABC, abstractmethod
from typing import Any, Dict, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, RangeError, ShapeMismatchError
from ..utils.logger import get_logger
from .schedule import NoiseSchedule

logger = get_logger("diffusion.nets")

Timesteps = Union[int, torch.Tensor]


def _timesteps(t: Timesteps, batch: int, lowest: int, highest: int) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long).detach().cpu()
    if t.dim() == 0:
        t = t.expand(batch)
    if t.shape != (batch,):
        raise ShapeMismatchError(f"expected {batch} timesteps, got shape {tuple(t.shape)}")
    if int(t.min()) < lowest or int(t.max()) > highest:
        raise RangeError(f"timesteps must lie in [{lowest}, {highest}]")
    return t


def _rows(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    return coef.to(device=like.device, dtype=like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


class SinusoidalEmbedding(nn.Module):
    """Transformer-style sinusoidal timestep embedding."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        half = dim // 2
        # buffer follows the module's dtype under .double()
        self.register_buffer("freqs", torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        args = t.to(self.freqs.dtype)[:, None] * self.freqs[None, :]
        emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
        if self.dim % 2:
            emb = F.pad(emb, (0, 1))
        return emb


class Denoiser(nn.Module, ABC):
    """Network predicting the injected noise ε from (x_t, t)."""

    arch: str = "abstract"

    def __init__(self, input_shape: Sequence[int], schedule_T: int):
        super().__init__()
        self.input_shape = tuple(int(s) for s in input_shape)
        self.schedule_T = int(schedule_T)

    @abstractmethod
    def forward(self, x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        ...

    @abstractmethod
    def arch_kwargs(self) -> Dict[str, Any]:
        ...

    def evaluate(self, x_t: torch.Tensor, t: Timesteps) -> torch.Tensor:
        """ε̂(x_t, t) for a batch (or a single unbatched sample)."""
        single = x_t.dim() == len(self.input_shape)
        batch = x_t.unsqueeze(0) if single else x_t
        if tuple(batch.shape[1:]) != self.input_shape:
            raise ShapeMismatchError(f"expected sample shape {self.input_shape}, got {tuple(batch.shape[1:])}")
        steps = _timesteps(t, batch.shape[0], 1, self.schedule_T).to(batch.device)
        out = self(batch, steps)
        return out[0] if single else out


class _ResidualBlock(nn.Module):
    def __init__(self, hidden: int, emb_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(hidden)
        self.fc1 = nn.Linear(hidden, hidden)
        self.emb = nn.Linear(emb_dim, hidden)
        self.fc2 = nn.Linear(hidden, hidden)

    def forward(self, h: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        z = F.silu(self.fc1(self.norm(h)) + self.emb(emb))
        return h + self.fc2(z)


class ResidualMLPDenoiser(Denoiser):
    """Small residual MLP for vector data."""

    arch = "residual_mlp"

    def __init__(self, dim: int, schedule_T: int, hidden: int = 128, n_blocks: int = 3, emb_dim: int = 32):
        super().__init__((dim,), schedule_T)
        self._kwargs = {"dim": dim, "hidden": hidden, "n_blocks": n_blocks, "emb_dim": emb_dim}
        self.embed = nn.Sequential(SinusoidalEmbedding(emb_dim), nn.Linear(emb_dim, emb_dim), nn.SiLU())
        self.inp = nn.Linear(dim, hidden)
        self.blocks = nn.ModuleList([_ResidualBlock(hidden, emb_dim) for _ in range(n_blocks)])
        self.out = nn.Linear(hidden, dim)

    def arch_kwargs(self) -> Dict[str, Any]:
        return dict(self._kwargs)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.embed(t).to(x_t.dtype)
        h = self.inp(x_t)
        for block in self.blocks:
            h = block(h, emb)
        return self.out(F.silu(h))


class _ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x)) + self.emb(emb)[:, :, None, None]
        h = F.silu(self.conv2(h))
        return h + self.skip(x)


class TinyUNetDenoiser(Denoiser):
    """Three-level U-Net for tiny images; ``size`` must be divisible by 4."""

    arch = "tiny_unet"

    def __init__(self, channels: int, size: int, schedule_T: int, base: int = 16, emb_dim: int = 32):
        super().__init__((channels, size, size), schedule_T)
        if size % 4:
            raise ShapeMismatchError(f"image size {size} must be divisible by 4")
        self._kwargs = {"channels": channels, "size": size, "base": base, "emb_dim": emb_dim}
        self.embed = nn.Sequential(SinusoidalEmbedding(emb_dim), nn.Linear(emb_dim, emb_dim), nn.SiLU())
        self.enc1 = _ConvBlock(channels, base, emb_dim)
        self.enc2 = _ConvBlock(base, 2 * base, emb_dim)
        self.mid = _ConvBlock(2 * base, 2 * base, emb_dim)
        self.dec2 = _ConvBlock(4 * base, 2 * base, emb_dim)
        self.dec1 = _ConvBlock(3 * base, base, emb_dim)
        self.out = nn.Conv2d(base, channels, 1)

    def arch_kwargs(self) -> Dict[str, Any]:
        return dict(self._kwargs)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        emb = self.embed(t).to(x_t.dtype)
        h1 = self.enc1(x_t, emb)
        h2 = self.enc2(F.avg_pool2d(h1, 2), emb)
        m = self.mid(F.avg_pool2d(h2, 2), emb)
        d2 = self.dec2(torch.cat([F.interpolate(m, scale_factor=2, mode="nearest"), h2], dim=1), emb)
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), h1], dim=1), emb)
        return self.out(d1)


class GaussianOracleDenoiser(Denoiser):
    """Exact posterior-optimal ε-predictor for data distributed as N(μ₀, σ₀²I)."""

    arch = "gaussian_oracle"

    def __init__(self, mu0: Sequence[float], sigma0sq: float, schedule: NoiseSchedule):
        mu0 = torch.as_tensor(mu0, dtype=torch.float64).flatten()
        super().__init__((mu0.numel(),), schedule.T)
        if sigma0sq <= 0:
            raise ConfigError("sigma0sq must be positive")
        self.sigma0sq = float(sigma0sq)
        self.register_buffer("mu0", mu0)
        self.register_buffer("alpha_bars", schedule.alpha_bars.clone())

    def arch_kwargs(self) -> Dict[str, Any]:
        return {"mu0": [float(m) for m in self.mu0], "sigma0sq": self.sigma0sq}

    def forward(self, x_t: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        alpha_bar = self.alpha_bars[t.cpu()]
        variance = alpha_bar * self.sigma0sq + (1.0 - alpha_bar)
        scale = _rows(torch.sqrt(1.0 - alpha_bar) / variance, x_t)
        mean = _rows(torch.sqrt(alpha_bar), x_t) * self.mu0.to(device=x_t.device, dtype=x_t.dtype)
        return scale * (x_t - mean)


def build_denoiser(arch: str, schedule_T: int, **kwargs) -> Denoiser:
    if arch == ResidualMLPDenoiser.arch:
        return ResidualMLPDenoiser(schedule_T=schedule_T, **kwargs)
    if arch == TinyUNetDenoiser.arch:
        return TinyUNetDenoiser(schedule_T=schedule_T, **kwargs)
    raise ConfigError(f"unknown denoiser architecture: {arch}")


def default_denoiser(input_shape: Tuple[int, ...], schedule_T: int) -> Denoiser:
    if len(input_shape) == 1:
        return ResidualMLPDenoiser(input_shape[0], schedule_T)
    channels, size, _ = input_shape
    return TinyUNetDenoiser(channels, size, schedule_T)


def score_from_denoiser(d: Denoiser, x: torch.Tensor, t: Timesteps, schedule: NoiseSchedule) -> torch.Tensor:
    """s(x, t) = −ε̂(x, t)/√(1−ᾱ_t); undefined at t = 0."""
    batch = x.shape[0] if x.dim() > len(d.input_shape) else 1
    steps = _timesteps(t, batch, 1, schedule.T)
    eps_hat = d.evaluate(x, t)
    std = torch.sqrt(1.0 - schedule.alpha_bars[steps])
    if x.dim() == len(d.input_shape):
        return -eps_hat / std[0].to(device=x.device, dtype=x.dtype)
    return -eps_hat / _rows(std, x)


def analytic_gaussian_score(
    mu0: Union[Sequence[float], torch.Tensor],
    sigma0sq: float,
    schedule: NoiseSchedule,
    x: torch.Tensor,
    t: Timesteps,
) -> torch.Tensor:
    """Closed-form ∇ log p_t for p(x₀) = N(μ₀, σ₀²I): −(x − √ᾱ_t μ₀)/(ᾱ_t σ₀² + 1 − ᾱ_t)."""
    if sigma0sq <= 0:
        raise ConfigError("sigma0sq must be positive")
    x = torch.as_tensor(x)
    mu0 = torch.as_tensor(mu0, dtype=x.dtype, device=x.device).flatten()
    if x.dim() <= 1:
        alpha_bar = schedule.alpha_bars[schedule.check_level(int(t))]
        variance = (alpha_bar * sigma0sq + (1.0 - alpha_bar)).to(device=x.device, dtype=x.dtype)
        return -(x - torch.sqrt(alpha_bar).to(device=x.device, dtype=x.dtype) * mu0) / variance
    steps = _timesteps(t, x.shape[0], 0, schedule.T)
    alpha_bar = schedule.alpha_bars[steps]
    variance = _rows(alpha_bar * sigma0sq + (1.0 - alpha_bar), x)
    return -(x - _rows(torch.sqrt(alpha_bar), x) * mu0) / variance


class ScoreEstimator(ABC):
    """s(x, t) ≈ ∇_x log p_t(x) for batched inputs."""

    mode: str

    def __init__(self, schedule: NoiseSchedule):
        self.schedule = schedule

    @abstractmethod
    def score(self, x: torch.Tensor, t: Timesteps) -> torch.Tensor:
        ...


class DerivedScore(ScoreEstimator):
    """Score derived from an ε-denoiser."""

    mode = "derived"

    def __init__(self, denoiser: Denoiser, schedule: NoiseSchedule):
        super().__init__(schedule)
        self.denoiser = denoiser

    def score(self, x: torch.Tensor, t: Timesteps) -> torch.Tensor:
        return score_from_denoiser(self.denoiser, x, t, self.schedule)


class AnalyticGaussianScore(ScoreEstimator):
    """Exact Gaussian-world score."""

    mode = "analytic"

    def __init__(self, mu0: Sequence[float], sigma0sq: float, schedule: NoiseSchedule):
        super().__init__(schedule)
        self.mu0 = torch.as_tensor(mu0, dtype=torch.float64).flatten()
        self.sigma0sq = float(sigma0sq)

    def score(self, x: torch.Tensor, t: Timesteps) -> torch.Tensor:
        return analytic_gaussian_score(self.mu0, self.sigma0sq, self.schedule, x, t)
