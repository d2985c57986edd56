"""Wall-clock cost of score-aware reweighting relative to a constant-level defense."""

import statistics
import time
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Sequence

import torch

from ..services.pipeline import DefensePipeline
from ..utils.logger import get_logger

logger = get_logger("harness.timing")


@dataclass
class OverheadReport:
    baseline_per_image_seconds: float
    ssni_per_image_seconds: float
    delta_seconds: float
    ratio: float
    reweight_overhead_seconds: float
    n_images: int
    repeats: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _time_defense(defense: DefensePipeline, x: torch.Tensor, seed: int, ids: Sequence[int], repeats: int):
    totals, plans = [], []
    for _ in range(repeats):
        started = time.perf_counter()
        result = defense.defend(x, seed, sample_ids=ids)
        totals.append(time.perf_counter() - started)
        plans.append(result.plan_seconds)
    return statistics.median(totals), statistics.median(plans)


def measure_overhead(
    baseline: DefensePipeline,
    ssni: DefensePipeline,
    batch: torch.Tensor,
    seed: int = 0,
    repeats: int = 3,
    warmup: int = 1,
    sample_ids: Optional[Sequence[int]] = None,
) -> OverheadReport:
    """Median per-image defend time of both pipelines after ``warmup`` untimed calls each."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n = batch.shape[0]
    ids = list(range(n)) if sample_ids is None else list(sample_ids)
    for _ in range(warmup):
        baseline.defend(batch, seed, sample_ids=ids)
        ssni.defend(batch, seed, sample_ids=ids)

    base_total, _ = _time_defense(baseline, batch, seed, ids, repeats)
    ssni_total, ssni_plan = _time_defense(ssni, batch, seed, ids, repeats)
    report = OverheadReport(
        baseline_per_image_seconds=base_total / n,
        ssni_per_image_seconds=ssni_total / n,
        delta_seconds=(ssni_total - base_total) / n,
        ratio=ssni_total / base_total if base_total > 0 else float("inf"),
        reweight_overhead_seconds=ssni_plan / n,
        n_images=n,
        repeats=repeats,
    )
    logger.info("Measured reweighting overhead", ratio=report.ratio, delta_seconds=report.delta_seconds)
    return report
