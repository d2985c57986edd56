"""
Expected perturbation score (EPS) estimation and validation calibration.

The EPS of a sample is the average score of forward-diffused copies of it over
levels t ~ U{1..tS}. Its norm measures how far the sample sits from the clean
data manifold and is what the reweighting functions consume.
"""

import math
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..diffusion.nets import ScoreEstimator
from ..diffusion.schedule import forward_diffuse_batch
from ..errors import ConfigError, NonFiniteError, RangeError
from ..utils.io import PathLike, read_json, write_json_atomic
from ..utils.logger import get_logger
from ..utils.rng import EPS_DOMAIN, content_ids, make_generator

logger = get_logger("scoring.eps")

Statistic = Literal["eps", "single"]


class EPSConfig(BaseModel):
    """How the per-sample statistic feeding the reweighting is computed."""
    model_config = ConfigDict(extra="forbid")

    tS: int = Field(default=20, ge=1)
    n_draws: int = Field(default=64, ge=1)
    statistic: Statistic = "eps"
    t_eval: Optional[int] = Field(default=None, ge=1)
    perturb: bool = True
    t_sampling: Literal["uniform", "max"] = "uniform"
    chunk_size: int = Field(default=4096, ge=1)

    @property
    def single_level(self) -> int:
        return self.t_eval if self.t_eval is not None else self.tS


@dataclass(frozen=True)
class EPSEstimate:
    vector: torch.Tensor
    norm: float
    n_draws: int
    tS: int

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")


class ReweightStats(BaseModel):
    """Validation EPS-norm statistics: sorted norms plus min/max/mean."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    norms: List[float]
    min: float
    max: float
    mean: float
    count: int = Field(ge=1)
    tS: int = Field(default=20, ge=1)
    n_draws: int = Field(default=64, ge=1)
    statistic: Statistic = "eps"

    @model_validator(mode="after")
    def check_consistency(self):
        if self.count != len(self.norms):
            raise ValueError(f"count {self.count} != number of norms {len(self.norms)}")
        if list(self.norms) != sorted(self.norms):
            raise ValueError("norms must be sorted ascending")
        if not self.min <= self.mean <= self.max:
            raise ValueError(f"need min <= mean <= max, got {self.min}, {self.mean}, {self.max}")
        if self.min != self.norms[0] or self.max != self.norms[-1]:
            raise ValueError("min/max disagree with the stored norms")
        return self

    @classmethod
    def from_norms(cls, norms: Sequence[float], tS: int = 20, n_draws: int = 64, statistic: Statistic = "eps") -> "ReweightStats":
        values = sorted(float(v) for v in norms)
        if not values:
            raise ValueError("cannot build statistics from an empty norm set")
        if not all(math.isfinite(v) for v in values):
            raise NonFiniteError("validation norms contain non-finite values")
        lo, hi = values[0], values[-1]
        # Rounding can push the float mean a hair past the bounds.
        mean = min(max(math.fsum(values) / len(values), lo), hi)
        return cls(norms=values, min=lo, max=hi, mean=mean, count=len(values), tS=tS, n_draws=n_draws, statistic=statistic)

    def save(self, path: PathLike):
        return write_json_atomic(path, self.model_dump())

    @classmethod
    def load(cls, path: PathLike) -> "ReweightStats":
        try:
            return cls.model_validate(read_json(path))
        except ValueError as exc:
            raise ConfigError(f"invalid calibration file {path}: {exc}") from exc


def _check_finite(values: torch.Tensor, what: str, rows: Optional[Sequence[int]] = None):
    bad = ~torch.isfinite(values.reshape(values.shape[0], -1)).all(dim=1)
    if bool(bad.any()):
        first = int(torch.nonzero(bad)[0])
        where = rows[first] if rows is not None else first
        raise NonFiniteError(f"non-finite {what} at row {where}")


def _draw_levels(tS: int, n_draws: int, generator: torch.Generator, t_sampling: str) -> torch.Tensor:
    if t_sampling == "max":
        return torch.full((n_draws,), tS, dtype=torch.long)
    return torch.randint(1, tS + 1, (n_draws,), generator=generator)


def _draw_scores(score: ScoreEstimator, x: torch.Tensor, levels: torch.Tensor, noise: torch.Tensor, perturb: bool) -> torch.Tensor:
    copies = x.unsqueeze(0).expand(levels.shape[0], *x.shape)
    x_t = forward_diffuse_batch(copies, levels, noise, score.schedule) if perturb else copies
    return score.score(x_t, levels)


def eps_estimate(
    score: ScoreEstimator,
    x: torch.Tensor,
    tS: int,
    n_draws: int,
    rng: torch.Generator,
    perturb: bool = True,
    t_sampling: str = "uniform",
) -> EPSEstimate:
    """Monte-Carlo EPS of one sample. ``t`` values are drawn first, then the noise, from ``rng``."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    score.schedule.check_level(tS, lowest=1)
    with torch.no_grad():
        levels = _draw_levels(tS, n_draws, rng, t_sampling)
        noise = torch.randn((n_draws, *x.shape), generator=rng, dtype=x.dtype).to(x.device)
        scores = _draw_scores(score, x, levels, noise, perturb)
        _check_finite(scores, "score")
        vector = scores.mean(dim=0)
    return EPSEstimate(vector=vector, norm=float(torch.linalg.vector_norm(vector)), n_draws=n_draws, tS=tS)


def single_score_norm(score: ScoreEstimator, x: torch.Tensor, t_eval: int) -> float:
    """‖s(x, t_eval)‖ at the sample itself, no perturbation."""
    score.schedule.check_level(t_eval, lowest=1)
    with torch.no_grad():
        value = score.score(x.unsqueeze(0), t_eval)[0]
    _check_finite(value.unsqueeze(0), "score")
    return float(torch.linalg.vector_norm(value))


def eps_norm_batch(
    score: ScoreEstimator,
    xs: torch.Tensor,
    tS: int,
    n_draws: int,
    rng: int,
    sample_ids: Optional[Sequence[int]] = None,
    perturb: bool = True,
    t_sampling: str = "uniform",
    chunk_size: int = 4096,
) -> np.ndarray:
    """Per-row EPS norms; row i draws from the substream ``(rng, EPS_DOMAIN, sample_ids[i])``.

    Rows are scored together in chunks of roughly ``chunk_size`` perturbed copies.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    score.schedule.check_level(tS, lowest=1)
    ids = list(range(xs.shape[0])) if sample_ids is None else [int(i) for i in sample_ids]
    if len(ids) != xs.shape[0]:
        raise ValueError(f"{len(ids)} sample ids for {xs.shape[0]} rows")

    norms = np.empty(xs.shape[0], dtype=np.float64)
    rows_per_chunk = max(1, chunk_size // n_draws)
    with torch.no_grad():
        for start in range(0, xs.shape[0], rows_per_chunk):
            stop = min(start + rows_per_chunk, xs.shape[0])
            levels, noise = [], []
            for i in range(start, stop):
                gen = make_generator(rng, EPS_DOMAIN, ids[i])
                levels.append(_draw_levels(tS, n_draws, gen, t_sampling))
                noise.append(torch.randn((n_draws, *xs.shape[1:]), generator=gen, dtype=xs.dtype))
            chunk = xs[start:stop]
            copies = chunk.repeat_interleave(n_draws, dim=0)
            flat_levels = torch.cat(levels)
            flat_noise = torch.cat(noise).to(xs.device)
            x_t = forward_diffuse_batch(copies, flat_levels, flat_noise, score.schedule) if perturb else copies
            scores = score.score(x_t, flat_levels)
            vectors = scores.reshape(stop - start, n_draws, *xs.shape[1:]).mean(dim=1)
            _check_finite(vectors, "EPS", rows=list(range(start, stop)))
            norms[start:stop] = torch.linalg.vector_norm(vectors.reshape(stop - start, -1), dim=1).double().cpu().numpy()
    return norms


def statistic_norms(
    score: ScoreEstimator,
    xs: torch.Tensor,
    config: EPSConfig,
    rng: int,
    sample_ids: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """The configured per-row statistic: EPS norm or single score norm."""
    if config.statistic == "single":
        t_eval = score.schedule.check_level(config.single_level, lowest=1)
        with torch.no_grad():
            values = score.score(xs, t_eval)
        _check_finite(values, "score")
        return torch.linalg.vector_norm(values.reshape(xs.shape[0], -1), dim=1).double().cpu().numpy()
    return eps_norm_batch(
        score,
        xs,
        config.tS,
        config.n_draws,
        rng,
        sample_ids=sample_ids,
        perturb=config.perturb,
        t_sampling=config.t_sampling,
        chunk_size=config.chunk_size,
    )


def calibrate_reference(
    score: ScoreEstimator,
    validation_set: torch.Tensor,
    tS: int,
    n_draws: int,
    rng: int,
    config: Optional[EPSConfig] = None,
) -> ReweightStats:
    """Clean validation norms, keyed by row content so duplicates score identically."""
    xs = getattr(validation_set, "x", validation_set)
    if xs.shape[0] == 0:
        raise ValueError("validation set is empty")
    if tS < 1 or tS > score.schedule.T:
        raise RangeError(f"tS {tS} outside [1, {score.schedule.T}]")
    config = (config or EPSConfig()).model_copy(update={"tS": tS, "n_draws": n_draws})
    norms = statistic_norms(score, xs, config, rng, sample_ids=content_ids(xs))
    stats = ReweightStats.from_norms(norms, tS=tS, n_draws=n_draws, statistic=config.statistic)
    logger.info("Calibrated reference norms", count=stats.count, min=stats.min, max=stats.max, mean=stats.mean, statistic=stats.statistic)
    return stats
