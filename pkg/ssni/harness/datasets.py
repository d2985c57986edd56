"""Desk-scale datasets: Gaussian worlds, two moons, tiny bar images, or arrays on disk."""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from sklearn.datasets import make_moons
from sklearn.model_selection import train_test_split

from ..errors import ConfigError
from ..utils.io import PathLike
from ..utils.logger import get_logger
from ..utils.rng import SUBSET_DOMAIN, derive_seed, make_generator

logger = get_logger("harness.datasets")

BUILTINS = ("gaussian1d", "gaussian2d", "two_moons", "tiny_images")
# Builtins whose inputs are clipped into a box.
VALUE_RANGES: Dict[str, Tuple[float, float]] = {"two_moons": (0.0, 1.0), "tiny_images": (0.0, 1.0)}


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: Literal["gaussian1d", "gaussian2d", "two_moons", "tiny_images", "directory"] = "two_moons"
    n: int = Field(default=1000, ge=1)
    seed: int = 0
    mean: Union[float, List[float]] = 0.0
    sigma: float = Field(default=1.0, gt=0)
    noise: Optional[float] = Field(default=None, ge=0)
    size: int = Field(default=8, ge=4)
    path: Optional[str] = None


@dataclass
class Dataset:
    x: torch.Tensor
    y: Optional[torch.Tensor]
    name: str

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def labeled(self) -> bool:
        return self.y is not None

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.labeled and len(self) else 0

    def take(self, indices) -> "Dataset":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return Dataset(self.x[idx], None if self.y is None else self.y[idx], self.name)

    def to(self, dtype: torch.dtype) -> "Dataset":
        return Dataset(self.x.to(dtype), self.y, self.name)


def _gaussian(spec: DatasetSpec, dim: int) -> Dataset:
    mean = np.broadcast_to(np.asarray(spec.mean, dtype=np.float64), (dim,))
    rng = np.random.default_rng(spec.seed)
    x = mean + spec.sigma * rng.standard_normal((spec.n, dim))
    return Dataset(torch.from_numpy(x.astype(np.float32)), None, spec.name)


def _two_moons(spec: DatasetSpec) -> Dataset:
    noise = 0.1 if spec.noise is None else spec.noise
    points, labels = make_moons(n_samples=spec.n, noise=noise, random_state=spec.seed)
    # Affine map of the moons into the unit box.
    points = np.stack([(points[:, 0] + 1.5) / 4.0, (points[:, 1] + 1.75) / 4.0], axis=1)
    points = np.clip(points, 0.0, 1.0)
    return Dataset(torch.from_numpy(points.astype(np.float32)), torch.from_numpy(labels.astype(np.int64)), spec.name)


def _tiny_images(spec: DatasetSpec) -> Dataset:
    """Class 0: one horizontal bar; class 1: one vertical bar; 1 x size x size in [0, 1]."""
    noise = 0.05 if spec.noise is None else spec.noise
    rng = np.random.default_rng(spec.seed)
    labels = rng.integers(0, 2, spec.n)
    positions = rng.integers(1, spec.size - 1, spec.n)
    images = np.full((spec.n, 1, spec.size, spec.size), 0.2)
    for i, (label, pos) in enumerate(zip(labels, positions)):
        if label == 0:
            images[i, 0, pos, :] = 0.8
        else:
            images[i, 0, :, pos] = 0.8
    images = np.clip(images + noise * rng.standard_normal(images.shape), 0.0, 1.0)
    return Dataset(torch.from_numpy(images.astype(np.float32)), torch.from_numpy(labels.astype(np.int64)), spec.name)


def load_dataset_dir(path: PathLike) -> Dataset:
    directory = Path(path)
    x_path, y_path = directory / "x.npy", directory / "y.npy"
    if not directory.is_dir() or not x_path.exists():
        raise ConfigError(f"dataset directory {directory} must contain x.npy")
    try:
        x = np.load(x_path, allow_pickle=False)
        y = np.load(y_path, allow_pickle=False) if y_path.exists() else None
    except ValueError as exc:
        raise ConfigError(f"malformed dataset directory {directory}: {exc}") from exc
    if x.ndim < 2 or x.shape[0] == 0:
        raise ConfigError(f"x.npy in {directory} must be a non-empty batch, got shape {x.shape}")
    if y is not None and (y.ndim != 1 or y.shape[0] != x.shape[0]):
        raise ConfigError(f"y.npy in {directory} must hold one label per row")
    return Dataset(torch.from_numpy(x), None if y is None else torch.from_numpy(y).long(), directory.name)


def save_dataset_dir(dataset: Dataset, path: PathLike) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "x.npy", dataset.x.detach().cpu().numpy(), allow_pickle=False)
    if dataset.y is not None:
        np.save(directory / "y.npy", dataset.y.detach().cpu().numpy(), allow_pickle=False)
    return directory


def make_dataset(spec: Union[DatasetSpec, str, dict]) -> Dataset:
    """Deterministic builtin generation given ``spec.seed``, or arrays loaded from ``spec.path``."""
    if isinstance(spec, str):
        if spec not in BUILTINS:
            raise ConfigError(f"unknown dataset: {spec}")
        spec = DatasetSpec(name=spec)
    elif isinstance(spec, dict):
        spec = DatasetSpec.model_validate(spec)

    if spec.name == "directory":
        if not spec.path:
            raise ConfigError("directory dataset needs a path")
        dataset = load_dataset_dir(spec.path)
    elif spec.name == "gaussian1d":
        dataset = _gaussian(spec, 1)
    elif spec.name == "gaussian2d":
        dataset = _gaussian(spec, 2)
    elif spec.name == "two_moons":
        dataset = _two_moons(spec)
    else:
        dataset = _tiny_images(spec)
    logger.debug("Dataset ready", name=spec.name, n=len(dataset), shape=list(dataset.x.shape[1:]))
    return dataset


def value_range(name: str) -> Optional[Tuple[float, float]]:
    return VALUE_RANGES.get(name)


def fixed_subset(n_total: int, size: int, seed: int) -> List[int]:
    """Sorted evaluation indices drawn without replacement; the whole set when ``size >= n_total``."""
    if size >= n_total:
        return list(range(n_total))
    order = torch.randperm(n_total, generator=make_generator(seed, SUBSET_DOMAIN))
    return sorted(int(i) for i in order[:size])


def split_dataset(dataset: Dataset, holdout_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Train/held-out split, stratified when labels exist."""
    indices = np.arange(len(dataset))
    stratify = dataset.y.numpy() if dataset.labeled else None
    train_idx, hold_idx = train_test_split(
        indices, test_size=holdout_fraction, random_state=derive_seed(seed) % (2**32), stratify=stratify
    )
    return dataset.take(np.sort(train_idx)), dataset.take(np.sort(hold_idx))
