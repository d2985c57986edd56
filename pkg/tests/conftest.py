import os
import sys

import pytest
import torch
from hypothesis import HealthCheck, settings as hypothesis_settings

# Ensure project root is in path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ssni.config import ExecutionMode, settings  # noqa: E402
from ssni.diffusion.nets import AnalyticGaussianScore, DerivedScore, GaussianOracleDenoiser  # noqa: E402
from ssni.diffusion.schedule import make_linear_schedule  # noqa: E402
from ssni.harness.classifier import ClassifierHyper, train_classifier  # noqa: E402
from ssni.harness.datasets import DatasetSpec, make_dataset  # noqa: E402
from ssni.purification.purify import PurifierConfig  # noqa: E402
from ssni.scoring.eps import calibrate_reference  # noqa: E402
from ssni.scoring.reweight import ReweightSpec  # noqa: E402
from ssni.services.pipeline import DefensePipeline  # noqa: E402
from ssni.utils.logger import setup_logging  # noqa: E402

hypothesis_settings.register_profile(
    "ssni", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
hypothesis_settings.load_profile("ssni")

ORACLE_MU0 = [0.5, 0.5]
ORACLE_SIGMA0SQ = 0.05


@pytest.fixture(scope="session", autouse=True)
def configure_logging():
    """Structured logs to the session's stderr, configured once."""
    setup_logging()
    yield


@pytest.fixture(autouse=True)
def safe_runtime(tmp_path, monkeypatch):
    """Deterministic single-worker runs writing under a temporary output root."""
    monkeypatch.setattr(settings.runtime, "mode", ExecutionMode.DETERMINISTIC)
    monkeypatch.setattr(settings.runtime, "num_workers", 1)
    monkeypatch.setattr(settings.runtime, "device", "cpu")
    monkeypatch.setattr(settings.runtime, "output_root", tmp_path / "results")
    yield


@pytest.fixture
def small_schedule():
    return make_linear_schedule(50, 1e-3, 0.05)


@pytest.fixture
def oracle_denoiser(small_schedule):
    return GaussianOracleDenoiser(ORACLE_MU0, ORACLE_SIGMA0SQ, small_schedule).double()


@pytest.fixture
def linear_classifier():
    """Two-class linear head splitting the unit square at x0 = 0.5."""
    model = torch.nn.Linear(2, 2).double()
    with torch.no_grad():
        model.weight.copy_(torch.tensor([[-10.0, 0.0], [10.0, 0.0]], dtype=torch.float64))
        model.bias.copy_(torch.tensor([5.0, -5.0], dtype=torch.float64))
    return model.eval()


@pytest.fixture
def unit_square_batch():
    gen = torch.Generator().manual_seed(11)
    x = torch.rand((16, 2), generator=gen, dtype=torch.float64)
    y = (x[:, 0] > 0.5).long()
    return x, y


@pytest.fixture
def oracle_stats(small_schedule, unit_square_batch):
    score = AnalyticGaussianScore(ORACLE_MU0, ORACLE_SIGMA0SQ, small_schedule)
    return calibrate_reference(score, unit_square_batch[0], 5, 8, 0)


@pytest.fixture
def oracle_pipeline(linear_classifier, oracle_denoiser, small_schedule, oracle_stats):
    """Sample-specific defense backed by the exact Gaussian denoiser."""
    return DefensePipeline(
        linear_classifier,
        denoiser=oracle_denoiser,
        schedule=small_schedule,
        score=DerivedScore(oracle_denoiser, small_schedule),
        stats=oracle_stats,
        spec=ReweightSpec(kind="sigmoid", t_star=20, b=0.0, tau=1.0),
        purifier=PurifierConfig.diffpure(),
    ).validate()


@pytest.fixture(scope="session")
def moons():
    return make_dataset(DatasetSpec(name="two_moons", n=1000, seed=0))


@pytest.fixture(scope="session")
def trained_moons_classifier(moons):
    return train_classifier(moons, ClassifierHyper(), seed=0)


