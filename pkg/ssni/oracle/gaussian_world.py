"""
Closed-form Gaussian diffusion oracle.

For p(x0) = N(mu0, sigma0sq * I) every marginal, posterior and score is known
exactly. Quantities here are computed with numpy in float64 straight from the
betas, independently of the torch code paths they are used to check.
"""

import copy
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from ..diffusion.nets import DerivedScore, GaussianOracleDenoiser, analytic_gaussian_score
from ..diffusion.schedule import NoiseSchedule, default_schedule, make_linear_schedule
from ..errors import ConfigError, RangeError
from ..purification.purify import PurifierConfig, purify_shared
from ..scoring.reweight import ReweightSpec
from ..services.pipeline import DefensePipeline
from ..utils.logger import get_logger
from ..utils.rng import NoiseStreams

logger = get_logger("oracle")


@dataclass(frozen=True, eq=False)
class GaussianWorld:
    mu0: np.ndarray
    sigma0sq: float
    schedule: NoiseSchedule

    def __post_init__(self):
        object.__setattr__(self, "mu0", np.atleast_1d(np.asarray(self.mu0, dtype=np.float64)))
        if not self.sigma0sq > 0:
            raise ConfigError("sigma0sq must be positive")

    @property
    def dim(self) -> int:
        return int(self.mu0.shape[0])

    @property
    def T(self) -> int:
        return self.schedule.T

    def alpha_bar(self, t: int) -> float:
        if not 0 <= int(t) <= self.T:
            raise RangeError(f"timestep {t} outside [0, {self.T}]")
        betas = self.schedule.betas.numpy()
        return float(np.prod(1.0 - betas[: int(t)]))

    def marginal_mean(self, t: int) -> np.ndarray:
        return np.sqrt(self.alpha_bar(t)) * self.mu0

    def marginal_variance(self, t: int) -> float:
        a = self.alpha_bar(t)
        return a * self.sigma0sq + (1.0 - a)

    def log_density(self, x: np.ndarray, t: int) -> float:
        v = self.marginal_variance(t)
        d = np.asarray(x, dtype=np.float64) - self.marginal_mean(t)
        return float(-0.5 * (d @ d) / v - 0.5 * self.dim * np.log(2.0 * np.pi * v))

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return -(np.asarray(x, dtype=np.float64) - self.marginal_mean(t)) / self.marginal_variance(t)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mu0 + np.sqrt(self.sigma0sq) * rng.standard_normal((n, self.dim))


def posterior_mean(world: GaussianWorld, x_t: np.ndarray, t: int) -> np.ndarray:
    """E[x0 | x_t] = (sqrt(a) sigma0sq x_t + (1 - a) mu0) / (a sigma0sq + 1 - a)."""
    a = world.alpha_bar(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    return (np.sqrt(a) * world.sigma0sq * x_t + (1.0 - a) * world.mu0) / world.marginal_variance(t)


def check_score_decomposition(world: GaussianWorld, x: np.ndarray, t: int) -> float:
    """Residual between the analytic score and -g x + g sqrt(a) E[x0 | x], g = 1 / (1 - a)."""
    if not 1 <= int(t) <= world.T:
        raise RangeError(f"timestep {t} outside [1, {world.T}]")
    x = np.asarray(x, dtype=np.float64)
    a = world.alpha_bar(t)
    g = 1.0 / (1.0 - a)
    decomposed = -g * x + g * np.sqrt(a) * posterior_mean(world, x, t)
    direct = analytic_gaussian_score(
        torch.from_numpy(world.mu0), world.sigma0sq, world.schedule, torch.from_numpy(x), int(t)
    ).numpy()
    return float(np.linalg.norm(direct - decomposed))


def finite_difference_error(world: GaussianWorld, x: np.ndarray, t: int, h: float = 1e-4) -> float:
    """Max abs gap between central differences of log p_t and the analytic score."""
    x = np.asarray(x, dtype=np.float64)
    fd = np.empty_like(x)
    for i in range(x.shape[0]):
        step = np.zeros_like(x)
        step[i] = h
        fd[i] = (world.log_density(x + step, t) - world.log_density(x - step, t)) / (2.0 * h)
    direct = analytic_gaussian_score(
        torch.from_numpy(world.mu0), world.sigma0sq, world.schedule, torch.from_numpy(x), int(t)
    ).numpy()
    return float(np.max(np.abs(fd - direct)))


def check_score_norm_separation(world: GaussianWorld, x: np.ndarray, t_pairs: Sequence[Tuple[int, int]]) -> pd.DataFrame:
    """Table of |‖s_t1(x)‖ − ‖s_t2(x)‖| against |t2 − t1|, with a per-row monotonicity flag.

    ``nondecreasing`` is evaluated within each fixed ``t1`` group as ``t2`` grows.
    """
    records = []
    for t1, t2 in t_pairs:
        n1 = float(np.linalg.norm(world.score(x, t1)))
        n2 = float(np.linalg.norm(world.score(x, t2)))
        records.append({"t1": int(t1), "t2": int(t2), "dt": abs(int(t2) - int(t1)), "gap": abs(n2 - n1)})
    table = pd.DataFrame.from_records(records, columns=["t1", "t2", "dt", "gap"])
    table = table.sort_values(["t1", "t2"], kind="mergesort").reset_index(drop=True)
    flags: List[bool] = []
    for _, group in table.groupby("t1", sort=False):
        gaps = group["gap"].to_numpy()
        flags += [bool(np.all(np.diff(gaps) >= -1e-15))] * len(gaps)
    table["nondecreasing"] = flags
    return table


def score_growth_bound(world: GaussianWorld, t: int, radius: float) -> float:
    """Lower bound on ‖s_t(x)‖/‖x‖ over ‖x‖ >= radius."""
    a = world.alpha_bar(t)
    return (1.0 - np.sqrt(a) * float(np.linalg.norm(world.mu0)) / radius) / world.marginal_variance(t)


def check_score_growth(world: GaussianWorld, t: int, radius: float, n_points: int = 256, seed: int = 0) -> Dict[str, float]:
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_points, world.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    points = directions * rng.uniform(radius, 4.0 * radius, size=(n_points, 1))
    ratios = np.array([np.linalg.norm(world.score(p, t)) / np.linalg.norm(p) for p in points])
    bound = score_growth_bound(world, t, radius)
    return {"bound": float(bound), "min_ratio": float(ratios.min()), "radius": float(radius), "t": int(t)}


def check_special_case(
    components: DefensePipeline,
    x: torch.Tensor,
    t_star: int,
    seed: int,
    baseline_seed: Optional[int] = None,
) -> bool:
    """True iff the constant-spec pipeline reproduces the sample-shared baseline bit for bit in float64."""
    denoiser = copy.deepcopy(components.denoiser).double().eval()
    pipeline = components._replace(denoiser=denoiser, spec=ReweightSpec.constant(t_star))
    x64 = x.detach().double()
    ids = list(range(x64.shape[0]))
    with torch.no_grad():
        plan, _ = pipeline.plan_for(x64, seed, ids)
        ours = pipeline.purify(x64, plan, NoiseStreams(seed, ids))
        shared = purify_shared(
            x64,
            t_star,
            denoiser,
            pipeline.schedule,
            pipeline.purifier,
            NoiseStreams(seed if baseline_seed is None else baseline_seed, ids),
        )
    return bool(torch.equal(ours, shared))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: Dict[str, Any] = field(default_factory=dict)


@dataclass
class TheoryReport:
    seed: int
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {"seed": self.seed, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}


def random_world(rng: np.random.Generator, schedule: NoiseSchedule) -> GaussianWorld:
    dim = int(rng.integers(1, 6))
    return GaussianWorld(mu0=2.0 * rng.standard_normal(dim), sigma0sq=float(rng.uniform(0.1, 10.0)), schedule=schedule)


def run_theory_checks(seed: int = 0, n_worlds: int = 100, exclusion_radius: float = 0.5) -> TheoryReport:
    """Score decomposition sweep, finite differences, norm separation, score growth bound and the special case."""
    rng = np.random.default_rng(seed)
    schedule = default_schedule()
    report = TheoryReport(seed=seed)

    residuals = []
    for _ in range(n_worlds):
        world = random_world(rng, schedule)
        t = int(rng.integers(1, schedule.T + 1))
        residuals.append(check_score_decomposition(world, 3.0 * rng.standard_normal(world.dim), t))
    report.checks.append(CheckResult("score_decomposition_residual", max(residuals) < 1e-9, max(residuals), 1e-9, {"worlds": n_worlds}))

    fd_errors = []
    for _ in range(10):
        world = random_world(rng, schedule)
        t = int(rng.integers(0, schedule.T + 1))
        fd_errors.append(finite_difference_error(world, rng.standard_normal(world.dim), t))
    report.checks.append(CheckResult("finite_difference_score", max(fd_errors) < 1e-6, max(fd_errors), 1e-6))

    x = np.array([1.5, -0.5])
    for sigma0sq in (4.0, 9.0):
        world = GaussianWorld(mu0=np.zeros(2), sigma0sq=sigma0sq, schedule=schedule)
        pairs = [(100, 100 + dt) for dt in (0, 20, 50, 100, 200, 400, 800)]
        table = check_score_norm_separation(world, x, pairs)
        gap = dict(zip(table["dt"], table["gap"]))
        ok = bool(table["nondecreasing"].all()) and bool(gap[200] > gap[20])
        report.checks.append(
            CheckResult(f"separation_sigma0sq_{sigma0sq:g}", ok, float(gap[200] - gap[20]), 0.0, {"gaps": table["gap"].tolist()})
        )

    world = GaussianWorld(mu0=np.array([0.1, -0.1]), sigma0sq=4.0, schedule=schedule)
    for t in (500, schedule.T):
        result = check_score_growth(world, t, exclusion_radius, seed=seed)
        ok = bool(result["bound"] > 0 and result["min_ratio"] >= result["bound"] - 1e-12)
        report.checks.append(CheckResult(f"score_growth_bound_t{t}", ok, result["min_ratio"], result["bound"], result))

    small = make_linear_schedule(50, 1e-3, 0.05)
    denoiser = GaussianOracleDenoiser([0.5, 0.5], 0.05, small)
    components = DefensePipeline(
        classifier=torch.nn.Identity(),
        denoiser=denoiser,
        schedule=small,
        score=DerivedScore(denoiser, small),
        spec=ReweightSpec.constant(20),
        purifier=PurifierConfig.diffpure(),
    )
    batch = torch.from_numpy(np.random.default_rng(seed).uniform(0.0, 1.0, (8, 2)))
    same = check_special_case(components, batch, 20, seed)
    control = check_special_case(components, batch, 20, seed, baseline_seed=seed + 1)
    report.checks.append(CheckResult("special_case", same and not control, float(same), 1.0, {"negative_control_equal": control}))

    logger.info("Theory checks finished", passed=report.passed, n_checks=len(report.checks))
    return report
