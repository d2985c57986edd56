import time
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..diffusion.nets import Denoiser, ScoreEstimator
from ..diffusion.schedule import NoiseSchedule
from ..errors import ConfigError, ShapeMismatchError
from ..purification.purify import PurifierConfig, PurifyTrace, purify
from ..scoring.eps import EPSConfig, ReweightStats, statistic_norms
from ..scoring.reweight import NoisePlan, ReweightSpec, plan_for_batch
from ..utils.logger import get_logger
from ..utils.rng import NoiseStreams, content_ids

logger = get_logger("pipeline")


@dataclass
class DefenseResult:
    labels: torch.Tensor
    plan: Optional[NoisePlan]
    purified: torch.Tensor
    norms: Optional[np.ndarray]
    logits: torch.Tensor
    trace: Optional[PurifyTrace] = None
    plan_seconds: float = 0.0
    purify_seconds: float = 0.0


class DefensePipeline:
    """Classifier behind score-aware purification: norms -> plan -> purify -> classify."""

    def __init__(
        self,
        classifier: nn.Module,
        denoiser: Optional[Denoiser] = None,
        schedule: Optional[NoiseSchedule] = None,
        score: Optional[ScoreEstimator] = None,
        stats: Optional[ReweightStats] = None,
        spec: Optional[ReweightSpec] = None,
        purifier: Optional[PurifierConfig] = None,
        eps_config: Optional[EPSConfig] = None,
    ):
        self.classifier = classifier
        self.denoiser = denoiser
        self.schedule = schedule
        self.score = score
        self.stats = stats
        self.spec = spec
        self.purifier = purifier or PurifierConfig()
        self.eps_config = eps_config or EPSConfig()

    @classmethod
    def undefended(cls, classifier: nn.Module) -> "DefensePipeline":
        return cls(classifier)

    @property
    def defended(self) -> bool:
        return self.denoiser is not None

    def validate(self) -> "DefensePipeline":
        """Fail fast if a defended pipeline is missing a component."""
        if self.classifier is None:
            raise ConfigError("pipeline has no classifier")
        if not self.defended:
            return self
        if self.schedule is None or self.spec is None:
            raise ConfigError("defended pipeline needs a schedule and a reweight spec")
        if self.denoiser.schedule_T != self.schedule.T:
            raise ConfigError(f"denoiser trained for T={self.denoiser.schedule_T}, schedule has T={self.schedule.T}")
        if self.spec.sample_specific:
            if self.score is None or self.stats is None:
                raise ConfigError("sample-specific reweighting needs a score estimator and calibration stats")
            if self.stats.statistic != self.eps_config.statistic:
                raise ConfigError(
                    f"calibration statistic {self.stats.statistic!r} != defense statistic {self.eps_config.statistic!r}"
                )
        return self

    def with_spec(self, spec: ReweightSpec) -> "DefensePipeline":
        return self._replace(spec=spec)

    def with_purifier(self, purifier: PurifierConfig) -> "DefensePipeline":
        return self._replace(purifier=purifier)

    def with_eps_config(self, eps_config: EPSConfig) -> "DefensePipeline":
        return self._replace(eps_config=eps_config)

    def with_stats(self, stats: ReweightStats) -> "DefensePipeline":
        return self._replace(stats=stats)

    def with_classifier(self, classifier: nn.Module) -> "DefensePipeline":
        return self._replace(classifier=classifier)

    def _replace(self, **changes) -> "DefensePipeline":
        fields = dict(
            classifier=self.classifier,
            denoiser=self.denoiser,
            schedule=self.schedule,
            score=self.score,
            stats=self.stats,
            spec=self.spec,
            purifier=self.purifier,
            eps_config=self.eps_config,
        )
        fields.update(changes)
        return DefensePipeline(**fields)

    def eps_norms(self, x: torch.Tensor, seed: int, sample_ids: Optional[Sequence[int]] = None) -> Optional[np.ndarray]:
        """Per-row statistic, or ``None`` when the spec does not look at it."""
        if not self.defended or not self.spec.sample_specific:
            return None
        return statistic_norms(self.score, x.detach(), self.eps_config, seed, sample_ids=sample_ids)

    def plan_for(
        self, x: torch.Tensor, seed: int, sample_ids: Optional[Sequence[int]] = None
    ) -> Tuple[Optional[NoisePlan], Optional[np.ndarray]]:
        if not self.defended:
            return None, None
        norms = self.eps_norms(x, seed, sample_ids)
        if norms is None:
            norms_for_plan = np.zeros(x.shape[0])
        else:
            norms_for_plan = norms
        plan = plan_for_batch(norms_for_plan, self.stats, self.spec, self.schedule.T)
        return plan, norms

    def purify(
        self,
        x: torch.Tensor,
        plan: Optional[NoisePlan],
        streams: NoiseStreams,
        stride: Optional[int] = None,
        trace: Optional[PurifyTrace] = None,
    ) -> torch.Tensor:
        if not self.defended or plan is None:
            return x
        cfg = self.purifier if stride is None else self.purifier.with_stride(stride)
        return purify(x, plan, self.denoiser, self.schedule, cfg, streams, trace=trace)

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(x)

    def logits(
        self, x: torch.Tensor, plan: Optional[NoisePlan], streams: NoiseStreams, stride: Optional[int] = None
    ) -> torch.Tensor:
        """Differentiable purify-then-classify for a fixed plan."""
        return self.classify(self.purify(x, plan, streams, stride=stride))

    def defend(
        self,
        x: torch.Tensor,
        seed: int,
        sample_ids: Optional[Sequence[int]] = None,
        trace: Optional[PurifyTrace] = None,
    ) -> DefenseResult:
        """Labels for a batch plus the plan, norms and purified batch behind them.

        Rows are keyed by content hash unless ``sample_ids`` is given, so a
        permuted batch gets permuted labels.
        """
        ids = content_ids(x) if sample_ids is None else list(sample_ids)
        if len(ids) != x.shape[0]:
            raise ShapeMismatchError(f"{len(ids)} sample ids for {x.shape[0]} rows")
        with torch.no_grad():
            started = time.perf_counter()
            plan, norms = self.plan_for(x, seed, ids)
            planned = time.perf_counter()
            purified = self.purify(x, plan, NoiseStreams(seed, ids), trace=trace)
            purified_at = time.perf_counter()
            logits = self.classify(purified)
        return DefenseResult(
            labels=logits.argmax(dim=1),
            plan=plan,
            purified=purified,
            norms=norms,
            logits=logits,
            trace=trace,
            plan_seconds=planned - started,
            purify_seconds=purified_at - planned,
        )


def defend(
    x: torch.Tensor,
    score: Optional[ScoreEstimator],
    stats: Optional[ReweightStats],
    spec: ReweightSpec,
    d: Denoiser,
    schedule: NoiseSchedule,
    cfg: PurifierConfig,
    classifier: nn.Module,
    rng: int,
    eps_config: Optional[EPSConfig] = None,
    sample_ids: Optional[Sequence[int]] = None,
) -> DefenseResult:
    pipeline = DefensePipeline(
        classifier, denoiser=d, schedule=schedule, score=score, stats=stats, spec=spec, purifier=cfg, eps_config=eps_config
    ).validate()
    return pipeline.defend(x, rng, sample_ids=sample_ids)
