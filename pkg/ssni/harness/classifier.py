"""Small classifiers standing in for the large pre-trained ones."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ConfigError, TrainingDivergedError
from ..utils.logger import get_logger, log_training_step
from ..utils.rng import SPLIT_DOMAIN, derive_seed, make_generator
from .datasets import Dataset, split_dataset

logger = get_logger("harness.classifier")


class ClassifierHyper(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(default=1500, ge=0)
    batch_size: int = Field(default=128, ge=1)
    learning_rate: float = Field(default=1e-2, gt=0)
    holdout_fraction: float = Field(default=0.2, gt=0, lt=1)
    hidden: int = Field(default=64, ge=1)
    depth: int = Field(default=2, ge=1)
    base_channels: int = Field(default=16, ge=1)
    eval_every: int = Field(default=100, ge=1)


class MLPClassifier(nn.Module):
    arch = "mlp"

    def __init__(self, dim: int, n_classes: int = 2, hidden: int = 64, depth: int = 2):
        super().__init__()
        self.input_shape = (dim,)
        self._kwargs = {"dim": dim, "n_classes": n_classes, "hidden": hidden, "depth": depth}
        layers: List[nn.Module] = []
        width = dim
        for _ in range(depth):
            layers += [nn.Linear(width, hidden), nn.SiLU()]
            width = hidden
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width, n_classes)
        # Zero head: an untrained model predicts class 0 for every input.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def arch_kwargs(self) -> Dict[str, Any]:
        return dict(self._kwargs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.body(x))


class ConvClassifier(nn.Module):
    arch = "conv"

    def __init__(self, channels: int, size: int, n_classes: int = 2, base: int = 16):
        super().__init__()
        self.input_shape = (channels, size, size)
        self._kwargs = {"channels": channels, "size": size, "n_classes": n_classes, "base": base}
        self.conv1 = nn.Conv2d(channels, base, 3, padding=1)
        self.conv2 = nn.Conv2d(base, 2 * base, 3, padding=1)
        self.head = nn.Linear(2 * base, n_classes)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def arch_kwargs(self) -> Dict[str, Any]:
        return dict(self._kwargs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x))
        h = F.silu(self.conv2(h))
        return self.head(h.amax(dim=(2, 3)))


def build_classifier(arch: str, **kwargs) -> nn.Module:
    if arch == MLPClassifier.arch:
        return MLPClassifier(**kwargs)
    if arch == ConvClassifier.arch:
        return ConvClassifier(**kwargs)
    raise ConfigError(f"unknown classifier architecture: {arch}")


def _default_classifier(shape: Sequence[int], n_classes: int, hyper: ClassifierHyper) -> nn.Module:
    if len(shape) == 1:
        return MLPClassifier(shape[0], n_classes, hidden=hyper.hidden, depth=hyper.depth)
    if len(shape) == 3 and shape[1] == shape[2]:
        return ConvClassifier(shape[0], shape[1], n_classes, base=hyper.base_channels)
    raise ConfigError(f"no default classifier for sample shape {tuple(shape)}")


def accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor) -> float:
    if x.shape[0] == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    with torch.no_grad():
        return float((model(x).argmax(dim=1) == y).double().mean())


@dataclass
class ClassifierResult:
    model: nn.Module
    train_accuracy: float
    heldout_accuracy: float
    history: List[float] = field(default_factory=list)


def train_classifier(dataset: Dataset, hyper: ClassifierHyper, seed: int) -> ClassifierResult:
    """Cross-entropy training with Adam; accuracy reported on a stratified held-out split."""
    if not dataset.labeled:
        raise ConfigError(f"dataset {dataset.name} has no labels")
    train, heldout = split_dataset(dataset, hyper.holdout_fraction, seed)
    n_classes = max(dataset.n_classes, 2)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, SPLIT_DOMAIN, 3))
        model = _default_classifier(tuple(dataset.x.shape[1:]), n_classes, hyper)
    model = model.to(dtype=dataset.x.dtype)

    logger.info("Training classifier", arch=model.arch, steps=hyper.steps, n_train=len(train), dataset=dataset.name)
    optimizer = torch.optim.Adam(model.parameters(), lr=hyper.learning_rate)
    gen = make_generator(seed, SPLIT_DOMAIN, 4)
    history: List[float] = []
    for step in range(1, hyper.steps + 1):
        model.train()
        idx = torch.randint(0, len(train), (min(hyper.batch_size, len(train)),), generator=gen)
        loss = F.cross_entropy(model(train.x[idx]), train.y[idx])
        if not torch.isfinite(loss):
            raise TrainingDivergedError(f"classifier loss became non-finite at step {step}: {float(loss)}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss))
        if step % hyper.eval_every == 0:
            log_training_step("classifier", step, float(loss))

    model.eval()
    result = ClassifierResult(
        model=model,
        train_accuracy=accuracy(model, train.x, train.y),
        heldout_accuracy=accuracy(model, heldout.x, heldout.y),
        history=history,
    )
    logger.info("Classifier trained", train_accuracy=result.train_accuracy, heldout_accuracy=result.heldout_accuracy)
    return result
