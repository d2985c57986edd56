"""
Evaluation - standard and robust accuracy on a fixed, seeded subset.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from ..attacks.adaptive import pgd_eot_attack, run_attack
from ..attacks.projection import AttackSpec
from ..config import settings
from ..diffusion.nets import ScoreEstimator
from ..scoring.eps import EPSConfig, statistic_norms
from ..services.pipeline import DefensePipeline
from ..utils.io import PathLike, write_csv_atomic, write_json_atomic
from ..utils.logger import get_logger, log_stage
from .datasets import Dataset, fixed_subset

logger = get_logger("harness.evaluation")

SAMPLE_COLUMNS = ["sample_id", "eps_norm", "level", "clean_correct", "robust_correct", "wall_ms"]


@dataclass
class Timings:
    per_image_purify_seconds: float = 0.0
    reweight_overhead_seconds: float = 0.0


@dataclass
class EvalReport:
    """Canonical report for one evaluation run."""
    standard_accuracy: float
    robust_accuracy: Optional[float]
    n_samples: int
    seed: int
    timings: Timings = field(default_factory=Timings)
    config_hash: str = ""
    n_standard_correct: int = 0
    n_robust_correct: Optional[int] = None
    attack_spec_hash: Optional[str] = None
    execution_mode: str = ""

    per_sample: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=SAMPLE_COLUMNS), repr=False, compare=False)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("an evaluation report needs at least one sample")

    def to_dict(self) -> Dict[str, Any]:
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "per_sample"}
        payload["timings"] = asdict(self.timings)
        return payload

    def write(self, out_dir: PathLike, name: str = "report") -> Path:
        out_dir = Path(out_dir)
        write_csv_atomic(out_dir / f"{name}_samples.csv", self.per_sample)
        return write_json_atomic(out_dir / f"{name}.json", self.to_dict())


@dataclass
class _BatchOutcome:
    rows: List[Dict[str, Any]]
    clean_correct: int
    robust_correct: int
    purify_seconds: float
    plan_seconds: float


def _evaluate_batch(
    defense: DefensePipeline,
    x: torch.Tensor,
    y: torch.Tensor,
    ids: Sequence[int],
    attack_spec: Optional[AttackSpec],
    seed: int,
) -> _BatchOutcome:
    started = time.perf_counter()
    clean = defense.defend(x, seed, sample_ids=ids)
    clean_ok = (clean.labels == y).cpu().numpy()

    robust_ok = None
    if attack_spec is not None:
        attacked = run_attack(x, y, defense, attack_spec, seed, sample_ids=ids)
        robust = defense.defend(attacked.x_adv, seed, sample_ids=ids)
        robust_ok = (robust.labels == y).cpu().numpy()
    wall_ms = (time.perf_counter() - started) * 1000.0 / max(len(ids), 1)

    levels = clean.plan.levels if clean.plan is not None else (0,) * len(ids)
    norms = clean.norms if clean.norms is not None else np.full(len(ids), np.nan)
    rows = [
        {
            "sample_id": int(ids[i]),
            "eps_norm": float(norms[i]),
            "level": int(levels[i]),
            "clean_correct": bool(clean_ok[i]),
            "robust_correct": None if robust_ok is None else bool(robust_ok[i]),
            "wall_ms": wall_ms,
        }
        for i in range(len(ids))
    ]
    return _BatchOutcome(
        rows=rows,
        clean_correct=int(clean_ok.sum()),
        robust_correct=int(robust_ok.sum()) if robust_ok is not None else 0,
        purify_seconds=clean.purify_seconds,
        plan_seconds=clean.plan_seconds,
    )


def evaluate(
    defense: DefensePipeline,
    classifier: Optional[nn.Module],
    dataset: Dataset,
    attack_spec: Optional[AttackSpec],
    seed: int,
    subset_size: int = 512,
    batch_size: int = 128,
    config_hash: str = "",
) -> EvalReport:
    """Standard (and, with an attack, robust) accuracy on the seeded fixed subset.

    Sample ids are dataset indices, so noise streams do not depend on batching.
    """
    if not dataset.labeled:
        raise ValueError(f"dataset {dataset.name} has no labels")
    if classifier is not None and classifier is not defense.classifier:
        defense = defense.with_classifier(classifier)
    defense.validate()

    indices = fixed_subset(len(dataset), subset_size, seed)
    subset = dataset.take(indices)
    batches = [
        (subset.x[i : i + batch_size], subset.y[i : i + batch_size], indices[i : i + batch_size])
        for i in range(0, len(indices), batch_size)
    ]
    log_stage("evaluate", n=len(indices), batches=len(batches), attack=attack_spec.mode if attack_spec else None)

    workers = settings.runtime.num_workers
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda b: _evaluate_batch(defense, *b, attack_spec, seed), batches))
    else:
        outcomes = [_evaluate_batch(defense, *b, attack_spec, seed) for b in batches]

    n = len(indices)
    clean_correct = sum(o.clean_correct for o in outcomes)
    robust_correct = sum(o.robust_correct for o in outcomes) if attack_spec is not None else None
    report = EvalReport(
        standard_accuracy=clean_correct / n,
        robust_accuracy=robust_correct / n if robust_correct is not None else None,
        n_samples=n,
        seed=int(seed),
        timings=Timings(
            per_image_purify_seconds=sum(o.purify_seconds for o in outcomes) / n,
            reweight_overhead_seconds=sum(o.plan_seconds for o in outcomes) / n,
        ),
        config_hash=config_hash,
        n_standard_correct=clean_correct,
        n_robust_correct=robust_correct,
        attack_spec_hash=attack_spec.spec_hash if attack_spec is not None else None,
        execution_mode=settings.runtime.mode.value,
        per_sample=pd.DataFrame([row for o in outcomes for row in o.rows], columns=SAMPLE_COLUMNS),
    )
    logger.info(
        "Evaluation complete",
        standard_accuracy=report.standard_accuracy,
        robust_accuracy=report.robust_accuracy,
        n=n,
        seed=seed,
    )
    return report


def summarize_reports(reports: Sequence[EvalReport]) -> Dict[str, Any]:
    """Mean and sample standard deviation (ddof=1) across seeds."""
    if not reports:
        raise ValueError("no reports to summarize")
    frame = pd.DataFrame(
        {
            "standard_accuracy": [r.standard_accuracy for r in reports],
            "robust_accuracy": [r.robust_accuracy for r in reports],
        },
        dtype=float,
    )
    summary: Dict[str, Any] = {"n_runs": len(reports), "seeds": [r.seed for r in reports]}
    for column in frame.columns:
        values = frame[column].dropna()
        summary[f"{column}_mean"] = float(values.mean()) if len(values) else None
        summary[f"{column}_std"] = float(values.std(ddof=1)) if len(values) > 1 else (0.0 if len(values) else None)
    return summary


def sweep_eps_norms(
    score: ScoreEstimator,
    classifier: nn.Module,
    dataset: Dataset,
    budgets: Sequence[float],
    attack_spec: AttackSpec,
    eps_config: EPSConfig,
    seed: int,
    subset_size: int = 256,
) -> pd.DataFrame:
    """Mean score-norm statistic of PGD examples per budget, attacked against the bare classifier.

    Every budget reuses the same subset and EPS substreams so the rows are paired.
    """
    if not budgets:
        raise ValueError("no budgets to sweep")
    indices = fixed_subset(len(dataset), subset_size, seed)
    subset = dataset.take(indices)
    undefended = DefensePipeline.undefended(classifier)
    ids = list(range(len(indices)))

    records = []
    for budget in sorted(float(b) for b in budgets):
        spec = attack_spec.model_copy(update={"epsilon": budget, "mode": "pgd_eot", "step_size": None})
        if budget > 0 and subset.y is not None:
            x_adv = pgd_eot_attack(subset.x, subset.y, undefended, spec, seed, sample_ids=ids)
        else:
            x_adv = subset.x
        norms = statistic_norms(score, x_adv, eps_config, seed, sample_ids=ids)
        records.append({"budget": budget, "mean_norm": float(norms.mean()), "std_norm": float(norms.std()), "n": len(norms)})
        logger.info("Swept budget", budget=budget, mean_norm=records[-1]["mean_norm"])
    return pd.DataFrame.from_records(records, columns=["budget", "mean_norm", "std_norm", "n"])


def norm_budget_spearman(frame: pd.DataFrame) -> float:
    return float(frame[["budget", "mean_norm"]].corr(method="spearman").iloc[0, 1])
