"""Attack hyperparameters and norm-ball projection."""

from typing import Literal, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import ShapeMismatchError
from ..utils.io import config_hash


class AttackSpec(BaseModel):
    """Budget and iteration counts of an adaptive white-box attack.

    ``step_size`` defaults to ``epsilon / 4``. Without ``clip_min``/``clip_max`` the
    adversarial input is left unclipped.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    norm: Literal["linf", "l2"] = "linf"
    epsilon: float = Field(default=8 / 255, ge=0)
    step_size: Optional[float] = Field(default=None, gt=0)
    pgd_iters: int = Field(default=40, ge=0)
    eot_iters: int = Field(default=20, ge=1)
    surrogate_stride: int = Field(default=5, ge=1)
    mode: Literal["pgd_eot", "bpda_eot"] = "pgd_eot"
    clip_min: Optional[float] = None
    clip_max: Optional[float] = None

    @model_validator(mode="after")
    def check_range(self):
        if self.clip_min is not None and self.clip_max is not None and self.clip_min >= self.clip_max:
            raise ValueError("clip_min must be below clip_max")
        return self

    def within_range(self, value_range: Optional[Tuple[float, float]]) -> "AttackSpec":
        """Adopt a data range as the clip range unless one is already set."""
        if value_range is None or self.clip_min is not None or self.clip_max is not None:
            return self
        return self.model_copy(update={"clip_min": value_range[0], "clip_max": value_range[1]})

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / 4

    @property
    def spec_hash(self) -> str:
        return config_hash(self.model_dump())


def _per_sample_norm(delta: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(delta.reshape(delta.shape[0], -1), dim=1).reshape(-1, *([1] * (delta.dim() - 1)))


def project_ball(x_adv: torch.Tensor, x: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    """Project onto the epsilon-ball around ``x``, then clip into the valid input range."""
    if x_adv.shape != x.shape:
        raise ShapeMismatchError(f"x_adv shape {tuple(x_adv.shape)} != x shape {tuple(x.shape)}")
    if spec.norm == "linf":
        projected = torch.max(torch.min(x_adv, x + spec.epsilon), x - spec.epsilon)
    else:
        delta = x_adv - x
        norm = _per_sample_norm(delta)
        factor = torch.where(norm > spec.epsilon, spec.epsilon / norm.clamp_min(1e-30), torch.ones_like(norm))
        projected = x + delta * factor
    if spec.clip_min is None and spec.clip_max is None:
        return projected
    return projected.clamp(spec.clip_min, spec.clip_max)


def perturbation_norm(x_adv: torch.Tensor, x: torch.Tensor, norm: str) -> torch.Tensor:
    delta = (x_adv - x).reshape(x.shape[0], -1)
    if norm == "linf":
        return delta.abs().amax(dim=1) if delta.shape[1] else torch.zeros(x.shape[0], dtype=x.dtype)
    return torch.linalg.vector_norm(delta, dim=1)
