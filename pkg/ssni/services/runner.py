"""Turns a RunConfig into artifacts, pipelines and reports for each CLI subcommand."""

from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd
import torch

from ..attacks.adaptive import run_attack
from ..attacks.projection import AttackSpec
from ..config import settings
from ..contracts.checkpoint import load_classifier, load_denoiser, save_checkpoint
from ..contracts.run_config import RunConfig
from ..diffusion.nets import DerivedScore
from ..diffusion.training import train_denoiser
from ..errors import ConfigError
from ..harness.ablations import bias_sweep, kind_variants, run_ablation, sampler_variants, tau_sweep
from ..harness.classifier import train_classifier
from ..harness.datasets import Dataset, fixed_subset, make_dataset, value_range
from ..harness.evaluation import evaluate, norm_budget_spearman, summarize_reports, sweep_eps_norms
from ..harness.plotting import plot_norm_vs_eps
from ..oracle.gaussian_world import run_theory_checks
from ..scoring.eps import ReweightStats, calibrate_reference
from ..utils.io import PathLike, resolve_output_dir, save_torch_atomic, write_csv_atomic, write_json_atomic
from ..utils.logger import get_logger, log_stage
from .pipeline import DefensePipeline

logger = get_logger("runner")

SWEEP_CSV = "sweep_eps.csv"


class LabRunner:
    """One run: a validated config, an effective seed and an output directory."""

    def __init__(self, config: RunConfig, seed: Optional[int] = None, out: Optional[PathLike] = None):
        self.config = config
        self.seed = config.seed if seed is None else int(seed)
        self.out = resolve_output_dir(out if out is not None else config.output_dir)
        self.dtype = torch.float64 if settings.runtime.float64 else torch.float32
        self.device = torch.device(settings.runtime.device)
        self.schedule = config.schedule.build()

    # Data and artifacts
    def dataset(self, seed: Optional[int] = None, n: Optional[int] = None) -> Dataset:
        spec = self.config.dataset
        updates: Dict[str, Any] = {}
        if seed is not None:
            updates["seed"] = seed
        if n is not None:
            updates["n"] = n
        data = make_dataset(spec.model_copy(update=updates) if updates else spec)
        return Dataset(data.x.to(self.device, self.dtype), None if data.y is None else data.y.to(self.device), data.name)

    def _model(self, model: torch.nn.Module) -> torch.nn.Module:
        return model.to(self.device, self.dtype).eval()

    def load_pipeline(self, with_calibration: bool = False) -> DefensePipeline:
        spec = self.config.reweight
        calibrated = with_calibration or spec.sample_specific
        needed = ["denoiser", "classifier"] + (["calibration"] if calibrated else [])
        self.config.require(needed)
        denoiser, _ = load_denoiser(self.config.artifact_path("denoiser"))
        classifier, _ = load_classifier(self.config.artifact_path("classifier"))
        denoiser, classifier = self._model(denoiser), self._model(classifier)
        stats = ReweightStats.load(self.config.artifact_path("calibration")) if calibrated else None
        return DefensePipeline(
            classifier,
            denoiser=denoiser,
            schedule=self.schedule,
            score=DerivedScore(denoiser, self.schedule),
            stats=stats,
            spec=spec,
            purifier=self.config.purifier,
            eps_config=self.config.eps,
        ).validate()

    def _attack_spec(self) -> Optional[AttackSpec]:
        """The configured attack, clipped to the dataset's value range when it sets none."""
        if self.config.attack is None:
            return None
        return self.config.attack.within_range(value_range(self.config.dataset.name))

    def _require_attack(self) -> AttackSpec:
        spec = self._attack_spec()
        if spec is None:
            raise ConfigError("this command needs an attack section in the config")
        return spec

    # Subcommands
    def train_diffusion(self) -> Dict[str, Any]:
        log_stage("train-diffusion", seed=self.seed)
        result = train_denoiser(self.dataset(), self.schedule, self.config.denoiser, self.seed)
        path = save_checkpoint(self.out / "denoiser.pt", "denoiser", result.model, self.seed, self.schedule.T)
        summary = {"checkpoint": str(path), "init_loss": result.init_loss, "final_loss": result.final_loss}
        write_json_atomic(self.out / "train_diffusion.json", summary)
        return summary

    def train_classifier(self) -> Dict[str, Any]:
        log_stage("train-classifier", seed=self.seed)
        result = train_classifier(self.dataset(), self.config.classifier, self.seed)
        path = save_checkpoint(self.out / "classifier.pt", "classifier", result.model, self.seed)
        summary = {
            "checkpoint": str(path),
            "train_accuracy": result.train_accuracy,
            "heldout_accuracy": result.heldout_accuracy,
        }
        write_json_atomic(self.out / "train_classifier.json", summary)
        return summary

    def calibrate(self) -> Dict[str, Any]:
        log_stage("calibrate", seed=self.seed)
        self.config.require(["denoiser"])
        denoiser, _ = load_denoiser(self.config.artifact_path("denoiser"))
        score = DerivedScore(self._model(denoiser), self.schedule)
        evaluation = self.config.evaluation
        validation = self.dataset(seed=evaluation.validation_seed, n=evaluation.validation_size)
        eps = self.config.eps
        stats = calibrate_reference(score, validation.x, eps.tS, eps.n_draws, self.seed, config=eps)
        path = stats.save(self.out / "calibration.json")
        return {"calibration": str(path), "count": stats.count, "min": stats.min, "max": stats.max, "mean": stats.mean}

    def attack(self) -> Dict[str, Any]:
        spec = self._require_attack()
        log_stage("attack", seed=self.seed, mode=spec.mode)
        pipeline = self.load_pipeline()
        data = self.dataset()
        indices = fixed_subset(len(data), self.config.evaluation.subset_size, self.seed)
        subset = data.take(indices)
        result = run_attack(subset.x, subset.y, pipeline, spec, self.seed, sample_ids=indices)
        save_torch_atomic(self.out / "adversarial.pt", {"x_adv": result.x_adv.cpu(), "indices": indices})
        write_csv_atomic(self.out / "adversarial_samples.csv", pd.DataFrame({"sample_id": indices, "final_loss": result.final_loss}))
        manifest = {"spec_hash": result.spec_hash, "seed": result.seed, "n": len(indices), "config_hash": self.config.config_hash}
        write_json_atomic(self.out / "adversarial_manifest.json", manifest)
        return manifest

    def evaluate(self) -> Dict[str, Any]:
        pipeline = self.load_pipeline()
        evaluation = self.config.evaluation
        spec = self._attack_spec() if evaluation.attack else None
        report = evaluate(
            pipeline,
            None,
            self.dataset(),
            spec,
            self.seed,
            subset_size=evaluation.subset_size,
            batch_size=evaluation.batch_size,
            config_hash=self.config.config_hash,
        )
        report.write(self.out)
        return report.to_dict()

    def evaluate_seeds(self) -> Dict[str, Any]:
        """Three-seed (or configured) mean and standard deviation."""
        pipeline = self.load_pipeline()
        evaluation = self.config.evaluation
        spec = self._attack_spec() if evaluation.attack else None
        reports = []
        for seed in evaluation.seeds:
            report = evaluate(
                pipeline, None, self.dataset(), spec, seed, evaluation.subset_size, evaluation.batch_size, self.config.config_hash
            )
            report.write(self.out, name=f"report_seed{seed}")
            reports.append(report)
        summary = summarize_reports(reports)
        write_json_atomic(self.out / "summary.json", summary)
        return summary

    def sweep_eps(self) -> Dict[str, Any]:
        spec = self._require_attack()
        self.config.require(["denoiser", "classifier"])
        denoiser, _ = load_denoiser(self.config.artifact_path("denoiser"))
        classifier, _ = load_classifier(self.config.artifact_path("classifier"))
        score = DerivedScore(self._model(denoiser), self.schedule)
        frame = sweep_eps_norms(
            score,
            self._model(classifier),
            self.dataset(),
            self.config.evaluation.budgets,
            spec,
            self.config.eps,
            self.seed,
            subset_size=min(self.config.evaluation.subset_size, 256),
        )
        write_csv_atomic(self.out / SWEEP_CSV, frame)
        rho = norm_budget_spearman(frame) if len(frame) > 1 else None
        summary = {"budgets": frame["budget"].tolist(), "mean_norm": frame["mean_norm"].tolist(), "spearman": rho}
        write_json_atomic(self.out / "sweep_eps.json", summary)
        return summary

    def plot(self) -> Dict[str, Any]:
        source = self.out / SWEEP_CSV
        if not source.exists():
            raise ConfigError(f"no sweep results at {source}; run sweep-eps first")
        csv_path, png_path = plot_norm_vs_eps(pd.read_csv(source), self.out)
        return {"csv": str(csv_path), "png": str(png_path)}

    def ablate(self) -> Dict[str, Any]:
        pipeline = self.load_pipeline(with_calibration=True)
        evaluation = self.config.evaluation
        variants = (
            bias_sweep(evaluation.ablation_biases)
            + tau_sweep(evaluation.ablation_taus)
            + kind_variants()
            + sampler_variants()
        )
        spec = self._attack_spec() if evaluation.attack else None
        table = run_ablation(
            pipeline, self.dataset(), variants, spec, evaluation.seeds, evaluation.subset_size, evaluation.batch_size
        )
        write_csv_atomic(self.out / "ablation.csv", table)
        means = table.groupby("variant", sort=False)[["standard_accuracy", "robust_accuracy"]].mean()
        return {"variants": means.reset_index().to_dict(orient="records")}


def check_theory(seed: int, out: Optional[PathLike] = None) -> Dict[str, Any]:
    log_stage("check-theory", seed=seed)
    report = run_theory_checks(seed)
    payload = report.to_dict()
    write_json_atomic(Path(resolve_output_dir(out)) / "theory.json", payload)
    return payload
