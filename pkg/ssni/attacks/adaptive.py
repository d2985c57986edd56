"""
Adaptive white-box attacks against the full purification defense.

Both attacks recompute the noise plan once per PGD iteration, outside the EOT
loop, and treat it as a constant while averaging gradients over EOT draws.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import NonFiniteError
from ..scoring.reweight import NoisePlan
from ..services.pipeline import DefensePipeline
from ..utils.logger import get_logger, log_attack_step
from ..utils.rng import EOT_DOMAIN, PLAN_DOMAIN, NoiseStreams, derive_seed
from .bpda import BPDAWrapper
from .projection import AttackSpec, project_ball

logger = get_logger("attacks")

LossFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def cross_entropy_sum(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, y, reduction="sum")


@dataclass
class AttackResult:
    x_adv: torch.Tensor
    final_loss: np.ndarray
    spec_hash: str
    seed: int


def _check_gradient(grad: torch.Tensor) -> torch.Tensor:
    if not bool(torch.isfinite(grad).all()):
        bad = ~torch.isfinite(grad.reshape(grad.shape[0], -1)).all(dim=1)
        raise NonFiniteError(f"non-finite attack gradient at row {int(torch.nonzero(bad)[0])}")
    return grad


def _surrogate_value_and_grad(
    defense: DefensePipeline,
    x: torch.Tensor,
    y: torch.Tensor,
    loss: LossFn,
    stride: int,
    plan: Optional[NoisePlan],
    streams: NoiseStreams,
) -> Tuple[float, torch.Tensor]:
    x_in = x.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        value = loss(defense.logits(x_in, plan, streams, stride=stride), y)
        (grad,) = torch.autograd.grad(value, x_in)
    return float(value.detach()), _check_gradient(grad.detach())


def surrogate_gradient(
    defense: DefensePipeline,
    x: torch.Tensor,
    y: torch.Tensor,
    loss: Optional[LossFn] = None,
    stride: int = 1,
    plan: Optional[NoisePlan] = None,
    streams: Optional[NoiseStreams] = None,
    seed: int = 0,
) -> torch.Tensor:
    """d loss(classifier(purify_strided(x))) / dx with the reverse chain collapsed to ``stride``.

    Without an explicit plan the defense's own plan for ``x`` is used; without
    streams, positional streams from ``seed``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    streams = streams or NoiseStreams.positional(seed, x.shape[0])
    if plan is None and defense.defended:
        plan, _ = defense.plan_for(x, seed, streams.sample_ids)
    _, grad = _surrogate_value_and_grad(defense, x, y, loss or cross_entropy_sum, stride, plan, streams)
    return grad


def _bpda_value_and_grad(
    defense: DefensePipeline, x: torch.Tensor, y: torch.Tensor, loss: LossFn, plan: Optional[NoisePlan], streams: NoiseStreams
) -> Tuple[float, torch.Tensor]:
    purifier = BPDAWrapper(lambda z: defense.purify(z, plan, streams))
    x_in = x.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        value = loss(defense.classify(purifier(x_in)), y)
        (grad,) = torch.autograd.grad(value, x_in)
    return float(value.detach()), _check_gradient(grad.detach())


def _ascent_step(x_adv: torch.Tensor, grad: torch.Tensor, spec: AttackSpec) -> torch.Tensor:
    if spec.norm == "linf":
        return x_adv + spec.alpha * grad.sign()
    flat = torch.linalg.vector_norm(grad.reshape(grad.shape[0], -1), dim=1)
    scale = torch.where(flat > 0, 1.0 / flat.clamp_min(1e-30), torch.zeros_like(flat))
    return x_adv + spec.alpha * grad * scale.reshape(-1, *([1] * (grad.dim() - 1)))


def _eot_attack(
    x: torch.Tensor,
    y: torch.Tensor,
    defense: DefensePipeline,
    spec: AttackSpec,
    rng: int,
    sample_ids: Optional[Sequence[int]],
    loss: LossFn,
    bpda: bool,
) -> torch.Tensor:
    x = x.detach()
    ids = list(range(x.shape[0])) if sample_ids is None else [int(i) for i in sample_ids]
    x_adv = x.clone()
    draws = spec.eot_iters if defense.defended else 1
    mode = "bpda_eot" if bpda else "pgd_eot"

    for k in range(spec.pgd_iters):
        plan, _ = defense.plan_for(x_adv, derive_seed(rng, PLAN_DOMAIN, k), ids)
        grad = torch.zeros_like(x_adv)
        total = 0.0
        for j in range(draws):
            streams = NoiseStreams(derive_seed(rng, EOT_DOMAIN, k, j), ids)
            if bpda:
                value, g = _bpda_value_and_grad(defense, x_adv, y, loss, plan, streams)
            else:
                value, g = _surrogate_value_and_grad(defense, x_adv, y, loss, spec.surrogate_stride, plan, streams)
            # Running mean: a deterministic defense averages to exactly g.
            grad = grad + (g - grad) / (j + 1)
            total += value
        x_adv = project_ball(_ascent_step(x_adv, grad, spec), x, spec).detach()
        # Loss is summed over the batch; log it per sample.
        mean_loss = total / (draws * max(x_adv.shape[0], 1))
        log_attack_step(mode, k, mean_loss, max_level=plan.max_level if plan is not None else 0)
    return x_adv


def pgd_eot_attack(
    x: torch.Tensor,
    y: torch.Tensor,
    defense: DefensePipeline,
    spec: AttackSpec,
    rng: int,
    sample_ids: Optional[Sequence[int]] = None,
    loss: Optional[LossFn] = None,
) -> torch.Tensor:
    """PGD with EOT-averaged surrogate gradients."""
    return _eot_attack(x, y, defense, spec, rng, sample_ids, loss or cross_entropy_sum, bpda=False)


def bpda_eot_attack(
    x: torch.Tensor,
    y: torch.Tensor,
    defense: DefensePipeline,
    spec: AttackSpec,
    rng: int,
    sample_ids: Optional[Sequence[int]] = None,
    loss: Optional[LossFn] = None,
) -> torch.Tensor:
    """PGD where the purifier runs forward for real and is the identity on the backward pass."""
    return _eot_attack(x, y, defense, spec, rng, sample_ids, loss or cross_entropy_sum, bpda=True)


def run_attack(
    x: torch.Tensor,
    y: torch.Tensor,
    defense: DefensePipeline,
    spec: AttackSpec,
    seed: int,
    sample_ids: Optional[Sequence[int]] = None,
) -> AttackResult:
    """Dispatch on ``spec.mode`` and record the per-sample loss of the final batch."""
    attack = bpda_eot_attack if spec.mode == "bpda_eot" else pgd_eot_attack
    logger.info("Running attack", mode=spec.mode, norm=spec.norm, epsilon=spec.epsilon, iters=spec.pgd_iters, n=x.shape[0])
    x_adv = attack(x, y, defense, spec, seed, sample_ids=sample_ids)

    ids = list(range(x.shape[0])) if sample_ids is None else list(sample_ids)
    with torch.no_grad():
        plan, _ = defense.plan_for(x_adv, derive_seed(seed, PLAN_DOMAIN, spec.pgd_iters), ids)
        streams = NoiseStreams(derive_seed(seed, EOT_DOMAIN, spec.pgd_iters, 0), ids)
        logits = defense.logits(x_adv, plan, streams)
        final_loss = F.cross_entropy(logits, y, reduction="none").double().cpu().numpy()
    logger.info("Attack finished", mode=spec.mode, mean_final_loss=float(final_loss.mean()) if final_loss.size else 0.0)
    return AttackResult(x_adv=x_adv, final_loss=final_loss, spec_hash=spec.spec_hash, seed=int(seed))
