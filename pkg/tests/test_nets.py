import math

import pytest
import torch

from ssni.diffusion.nets import (
    AnalyticGaussianScore,
    Denoiser,
    DerivedScore,
    GaussianOracleDenoiser,
    ResidualMLPDenoiser,
    TinyUNetDenoiser,
    analytic_gaussian_score,
    build_denoiser,
    score_from_denoiser,
)
from ssni.diffusion.schedule import NoiseSchedule, default_schedule
from ssni.errors import ConfigError, RangeError, ShapeMismatchError
from ssni.oracle.gaussian_world import GaussianWorld, finite_difference_error


class ConstantDenoiser(Denoiser):
    """Predicts the same value everywhere."""

    arch = "constant"

    def __init__(self, dim: int, schedule_T: int, value: float):
        super().__init__((dim,), schedule_T)
        self.value = value

    def arch_kwargs(self):
        return {"dim": self.input_shape[0], "value": self.value}

    def forward(self, x_t, t):
        return torch.full_like(x_t, self.value)


class TestDerivedScore:
    def test_zero_denoiser_gives_zero_score(self):
        schedule = default_schedule()
        d = ConstantDenoiser(3, schedule.T, 0.0)
        score = score_from_denoiser(d, torch.randn(4, 3), 10, schedule)
        assert torch.equal(score, torch.zeros(4, 3))

    def test_arithmetic(self):
        # alpha_bar_1 = 0.75, so the score is -2 / sqrt(0.25)
        schedule = NoiseSchedule.from_betas([0.25])
        d = ConstantDenoiser(1, 1, 2.0)
        score = score_from_denoiser(d, torch.ones(1, 1, dtype=torch.float64), 1, schedule)
        assert score.item() == pytest.approx(-4.0, abs=1e-12)

    def test_rejects_level_zero(self):
        schedule = default_schedule()
        d = ConstantDenoiser(2, schedule.T, 1.0)
        with pytest.raises(RangeError):
            score_from_denoiser(d, torch.zeros(1, 2), 0, schedule)

    def test_homogeneous_in_denoiser_output(self):
        schedule = default_schedule()
        x = torch.randn(5, 2, dtype=torch.float64)
        base = score_from_denoiser(ConstantDenoiser(2, schedule.T, 1.5), x, 30, schedule)
        tripled = score_from_denoiser(ConstantDenoiser(2, schedule.T, 4.5), x, 30, schedule)
        assert torch.allclose(tripled, 3.0 * base, rtol=1e-12)

    def test_oracle_denoiser_recovers_analytic_score(self):
        schedule = default_schedule()
        mu0, sigma0sq = [0.3, -1.0], 2.5
        d = GaussianOracleDenoiser(mu0, sigma0sq, schedule).double()
        x = torch.randn(8, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
        for t in (1, 10, 500, 1000):
            derived = DerivedScore(d, schedule).score(x, t)
            analytic = AnalyticGaussianScore(mu0, sigma0sq, schedule).score(x, t)
            assert torch.allclose(derived, analytic, rtol=1e-10, atol=1e-12)


class TestAnalyticScore:
    def test_zero_at_marginal_mean(self):
        schedule = default_schedule()
        mu0 = torch.tensor([1.0, -2.0], dtype=torch.float64)
        t = 250
        x = math.sqrt(schedule.alpha_bar(t)) * mu0
        assert torch.allclose(analytic_gaussian_score(mu0, 3.0, schedule, x, t), torch.zeros(2, dtype=torch.float64))

    @pytest.mark.parametrize("t", [0, 1, 100, 1000])
    def test_standard_world_score_is_negative_identity(self, t):
        schedule = default_schedule()
        x = torch.tensor([0.7, -1.3, 2.0], dtype=torch.float64)
        assert torch.allclose(analytic_gaussian_score([0.0, 0.0, 0.0], 1.0, schedule, x, t), -x, rtol=1e-12)

    def test_arithmetic(self):
        schedule = NoiseSchedule.from_betas([0.75])
        value = analytic_gaussian_score([1.0], 4.0, schedule, torch.tensor([3.0], dtype=torch.float64), 1)
        assert value.item() == pytest.approx(-(3.0 - 0.5) / 1.75, rel=1e-12)

    def test_level_zero_uses_prior(self):
        schedule = default_schedule()
        x = torch.tensor([2.0], dtype=torch.float64)
        assert analytic_gaussian_score([1.0], 4.0, schedule, x, 0).item() == pytest.approx(-0.25)

    def test_matches_finite_differences(self):
        schedule = default_schedule()
        world = GaussianWorld(mu0=[0.5, -0.25, 1.0], sigma0sq=3.0, schedule=schedule)
        for t in (0, 1, 50, 999):
            assert finite_difference_error(world, [0.3, 0.1, -0.4], t) < 1e-6

    def test_rejects_nonpositive_variance(self):
        with pytest.raises(ConfigError, match="sigma0sq"):
            analytic_gaussian_score([0.0], 0.0, default_schedule(), torch.zeros(1), 3)
        with pytest.raises(ConfigError, match="sigma0sq"):
            GaussianOracleDenoiser([0.0], -1.0, default_schedule())


class TestDenoiserNetworks:
    def test_mlp_output_shape_and_determinism(self):
        torch.manual_seed(0)
        d = ResidualMLPDenoiser(2, 100).eval()
        x = torch.randn(7, 2)
        first = d.evaluate(x, torch.arange(1, 8))
        second = d.evaluate(x, torch.arange(1, 8))
        assert first.shape == x.shape
        assert torch.equal(first, second)

    def test_unet_output_shape(self):
        torch.manual_seed(0)
        d = TinyUNetDenoiser(1, 8, 100).eval()
        x = torch.randn(3, 1, 8, 8)
        assert d.evaluate(x, 5).shape == x.shape

    def test_unet_rejects_size_not_divisible_by_four(self):
        with pytest.raises(ShapeMismatchError):
            TinyUNetDenoiser(1, 6, 100)

    def test_evaluate_single_sample(self):
        d = ResidualMLPDenoiser(2, 100).eval()
        assert d.evaluate(torch.randn(2), 3).shape == (2,)

    def test_evaluate_rejects_wrong_shape(self):
        d = ResidualMLPDenoiser(2, 100)
        with pytest.raises(ShapeMismatchError):
            d.evaluate(torch.randn(4, 3), 3)

    def test_evaluate_rejects_out_of_range_step(self):
        d = ResidualMLPDenoiser(2, 100)
        with pytest.raises(RangeError):
            d.evaluate(torch.randn(4, 2), 101)

    def test_build_from_arch_kwargs(self):
        d = ResidualMLPDenoiser(2, 100, hidden=32, n_blocks=2)
        rebuilt = build_denoiser(d.arch, d.schedule_T, **d.arch_kwargs())
        assert type(rebuilt) is ResidualMLPDenoiser
        assert rebuilt.arch_kwargs() == d.arch_kwargs()

    def test_build_unknown_arch(self):
        with pytest.raises(ConfigError):
            build_denoiser("transformer", 100)
