"""
Ablation sweeps over reweighting, sampler and statistic choices.

Every variant is evaluated on the same fixed subset with the same seeds, so the
rows of the returned table are paired across variants.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Sequence

import pandas as pd
import torch

from ..attacks.projection import AttackSpec
from ..scoring.eps import calibrate_reference
from ..services.pipeline import DefensePipeline
from ..utils.logger import get_logger
from .datasets import Dataset
from .evaluation import evaluate

logger = get_logger("harness.ablations")

ABLATION_COLUMNS = ["variant", "seed", "standard_accuracy", "robust_accuracy"]


@dataclass(frozen=True)
class Variant:
    name: str
    apply: Callable[[DefensePipeline], DefensePipeline]


def bias_sweep(biases: Iterable[float]) -> List[Variant]:
    return [Variant(f"bias={b:g}", lambda p, b=b: p.with_spec(p.spec.model_copy(update={"b": float(b)}))) for b in biases]


def tau_sweep(taus: Iterable[float]) -> List[Variant]:
    return [
        Variant(f"tau={t:g}", lambda p, t=t: p.with_spec(p.spec.model_copy(update={"kind": "sigmoid", "tau": float(t)})))
        for t in taus
    ]


def kind_variants(kinds: Sequence[str] = ("constant", "linear", "sigmoid")) -> List[Variant]:
    return [Variant(f"kind={k}", lambda p, k=k: p.with_spec(p.spec.model_copy(update={"kind": k}))) for k in kinds]


def sampler_variants(samplers: Sequence[str] = ("ddpm", "ddim")) -> List[Variant]:
    return [Variant(f"sampler={s}", lambda p, s=s: p.with_purifier(p.purifier.with_sampler(s))) for s in samplers]


def _recalibrated(pipeline: DefensePipeline, validation: torch.Tensor, seed: int, **eps_changes) -> DefensePipeline:
    eps_config = pipeline.eps_config.model_copy(update=eps_changes)
    stats = calibrate_reference(pipeline.score, validation, eps_config.tS, eps_config.n_draws, seed, config=eps_config)
    return pipeline.with_eps_config(eps_config).with_stats(stats)


def statistic_variants(validation: torch.Tensor, seed: int, t_eval: Optional[int] = None) -> List[Variant]:
    """EPS norm against the single score norm, each with its own calibration on ``validation``."""
    return [
        Variant("statistic=eps", lambda p: _recalibrated(p, validation, seed, statistic="eps")),
        Variant("statistic=single", lambda p: _recalibrated(p, validation, seed, statistic="single", t_eval=t_eval)),
    ]


def run_ablation(
    pipeline: DefensePipeline,
    dataset: Dataset,
    variants: Sequence[Variant],
    attack_spec: Optional[AttackSpec],
    seeds: Sequence[int],
    subset_size: int = 128,
    batch_size: int = 128,
) -> pd.DataFrame:
    """Tidy table (variant, seed, standard_accuracy, robust_accuracy)."""
    if not variants:
        raise ValueError("no ablation variants given")
    records = []
    for variant in variants:
        defense = variant.apply(pipeline)
        for seed in seeds:
            report = evaluate(defense, None, dataset, attack_spec, seed, subset_size=subset_size, batch_size=batch_size)
            records.append(
                {
                    "variant": variant.name,
                    "seed": int(seed),
                    "standard_accuracy": report.standard_accuracy,
                    "robust_accuracy": report.robust_accuracy,
                }
            )
        logger.info("Ablation variant done", variant=variant.name, seeds=len(seeds))
    return pd.DataFrame.from_records(records, columns=ABLATION_COLUMNS)
