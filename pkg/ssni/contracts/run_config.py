"""
Run Config Contract - the one file a CLI run reads
Unknown keys are rejected at every level and the error names the dotted key.
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..attacks.projection import AttackSpec
from ..diffusion.schedule import NoiseSchedule, make_linear_schedule
from ..diffusion.training import DenoiserHyper
from ..errors import ConfigError
from ..harness.classifier import ClassifierHyper
from ..harness.datasets import DatasetSpec
from ..purification.purify import PurifierConfig
from ..scoring.eps import EPSConfig
from ..scoring.reweight import ReweightSpec
from ..utils.io import PathLike, config_hash, read_json
from ..utils.logger import get_logger

logger = get_logger("run_config")

SCHEMA_VERSION = 1

ARTIFACTS = ("denoiser", "classifier", "calibration")


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    T: int = Field(default=1000, ge=1)
    beta_start: float = 1e-4
    beta_end: float = 0.02
    betas: Optional[List[float]] = None

    def build(self) -> NoiseSchedule:
        if self.betas is not None:
            return NoiseSchedule.from_betas(self.betas)
        return make_linear_schedule(self.T, self.beta_start, self.beta_end)


class ModelPaths(BaseModel):
    model_config = ConfigDict(extra="forbid")

    denoiser: Optional[str] = None
    classifier: Optional[str] = None
    calibration: Optional[str] = None


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subset_size: int = Field(default=512, ge=1)
    batch_size: int = Field(default=128, ge=1)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    validation_size: int = Field(default=1000, ge=1)
    validation_seed: int = 1
    budgets: List[float] = Field(default_factory=lambda: [0.0, 0.025, 0.05, 0.1])
    ablation_biases: List[float] = Field(default_factory=lambda: [0.0, 10.0, 20.0, 30.0])
    ablation_taus: List[float] = Field(default_factory=lambda: [5.0, 10.0, 20.0, 40.0])
    attack: bool = True


class RunConfig(BaseModel):
    """Validated run configuration (canonical JSON, schema version 1)."""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    models: ModelPaths = Field(default_factory=ModelPaths)
    denoiser: DenoiserHyper = Field(default_factory=DenoiserHyper)
    classifier: ClassifierHyper = Field(default_factory=ClassifierHyper)
    eps: EPSConfig = Field(default_factory=EPSConfig)
    reweight: ReweightSpec = Field(default_factory=ReweightSpec)
    purifier: PurifierConfig = Field(default_factory=PurifierConfig)
    attack: Optional[AttackSpec] = None
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seed: int = 0
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_levels(self):
        T = self.schedule.T if self.schedule.betas is None else len(self.schedule.betas)
        if self.reweight.t_star > T:
            raise ValueError(f"reweight.t_star {self.reweight.t_star} exceeds schedule T={T}")
        if self.eps.tS > T:
            raise ValueError(f"eps.tS {self.eps.tS} exceeds schedule T={T}")
        return self

    @property
    def config_hash(self) -> str:
        return config_hash(self.model_dump(mode="json"))

    def artifact_path(self, name: str) -> Path:
        value = getattr(self.models, name)
        if value is None:
            raise ConfigError(f"models.{name} is not set")
        return Path(value)

    def require(self, names: Iterable[str]) -> "RunConfig":
        """Every named artifact path must be set and exist."""
        for name in names:
            path = self.artifact_path(name)
            if not path.exists():
                raise ConfigError(f"models.{name} does not exist: {path}")
        return self

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], base_dir: Optional[Path] = None) -> "RunConfig":
        try:
            config = cls.model_validate(payload)
        except ValidationError as exc:
            problems = "; ".join(
                f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()
            )
            raise ConfigError(f"invalid run config: {problems}") from exc
        if base_dir is not None:
            config = config._resolved(base_dir)
        return config

    @classmethod
    def load(cls, path: PathLike, require: Iterable[str] = ()) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            payload = read_json(path)
        except ValueError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        config = cls.from_dict(payload, base_dir=path.parent).require(require)
        logger.debug("Run config loaded", path=str(path), config_hash=config.config_hash)
        return config

    def _resolved(self, base_dir: Path) -> "RunConfig":
        """Relative artifact, dataset and output paths are taken relative to the config file."""
        def resolve(value: Optional[str]) -> Optional[str]:
            if value is None or Path(value).is_absolute():
                return value
            return str(base_dir / value)

        models = self.models.model_copy(update={k: resolve(getattr(self.models, k)) for k in ARTIFACTS})
        dataset = self.dataset.model_copy(update={"path": resolve(self.dataset.path)})
        return self.model_copy(update={"models": models, "dataset": dataset, "output_dir": resolve(self.output_dir)})
