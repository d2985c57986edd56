import math

import pytest
import torch
from pydantic import ValidationError

from ssni.diffusion.nets import GaussianOracleDenoiser
from ssni.diffusion.schedule import NoiseSchedule, default_schedule, forward_diffuse
from ssni.errors import ConfigError, RangeError, ShapeMismatchError
from ssni.purification.purify import (
    PurifierConfig,
    PurifyTrace,
    RunSetting,
    purify,
    purify_shared,
    reverse_calls,
)
from ssni.purification.samplers import ddim_reverse_step, ddpm_reverse_step, guided_reverse_step
from ssni.scoring.reweight import NoisePlan
from ssni.utils.rng import NoiseStreams

# beta_1 = 0.1, beta_2 = 0.19, so alpha_bar_2 = 0.729
TWO_STEP = NoiseSchedule.from_betas([0.1, 0.19])


def _vec(*values):
    return torch.tensor([values], dtype=torch.float64)


class TestDDPMStep:
    def test_mean_with_zero_prediction(self):
        x = _vec(1.0, -2.0)
        out = ddpm_reverse_step(None, x, 2, torch.zeros_like(x), TWO_STEP, eps_hat=torch.zeros_like(x))
        assert torch.allclose(out, x / 0.9, rtol=1e-12)

    def test_noise_scaled_by_beta(self):
        x = _vec(0.0, 0.0)
        out = ddpm_reverse_step(None, x, 2, torch.ones_like(x), TWO_STEP, eps_hat=torch.zeros_like(x))
        assert torch.allclose(out, torch.full_like(x, math.sqrt(0.19)), rtol=1e-12)

    def test_no_noise_on_final_step(self):
        x = _vec(1.0, 1.0)
        out = ddpm_reverse_step(None, x, 1, torch.full_like(x, 5.0), TWO_STEP, eps_hat=torch.zeros_like(x))
        assert torch.allclose(out, x / math.sqrt(0.9), rtol=1e-12)

    def test_respaced_step_variance(self):
        x = _vec(1.0, 1.0)
        out = ddpm_reverse_step(None, x, 2, torch.ones_like(x), TWO_STEP, t_prev=0, eps_hat=torch.zeros_like(x))
        assert torch.allclose(out, x / math.sqrt(0.729), rtol=1e-12)

    def test_bounds(self):
        x = _vec(1.0, 1.0)
        with pytest.raises(RangeError):
            ddpm_reverse_step(None, x, 0, x, TWO_STEP, eps_hat=x)
        with pytest.raises(RangeError):
            ddpm_reverse_step(None, x, 1, x, TWO_STEP, t_prev=1, eps_hat=x)

    def test_uses_denoiser_when_no_prediction_given(self, oracle_denoiser, small_schedule):
        x = _vec(0.2, 0.9)
        noise = torch.zeros_like(x)
        direct = ddpm_reverse_step(oracle_denoiser, x, 10, noise, small_schedule)
        given = ddpm_reverse_step(None, x, 10, noise, small_schedule, eps_hat=oracle_denoiser.evaluate(x, 10))
        assert torch.equal(direct, given)


class TestDDIMStep:
    def test_zero_prediction_rescales(self):
        x = _vec(1.0, -1.0)
        out = ddim_reverse_step(None, x, 2, 1, TWO_STEP, eps_hat=torch.zeros_like(x))
        assert torch.allclose(out, x * math.sqrt(0.9 / 0.729), rtol=1e-12)

    def test_final_step_returns_clean_estimate(self):
        x0 = _vec(0.3, 0.7)
        eps = _vec(1.0, -0.5)
        x_t = forward_diffuse(x0, 2, eps, TWO_STEP)
        assert torch.allclose(ddim_reverse_step(None, x_t, 2, 0, TWO_STEP, eps_hat=eps), x0, rtol=1e-12, atol=1e-14)


class TestGuidedStep:
    def setup_method(self):
        self.x = _vec(1.0, 1.0)
        self.zero = torch.zeros_like(self.x)
        self.noise = _vec(0.4, -0.2)

    def test_zero_scale_matches_plain(self):
        plain = ddpm_reverse_step(None, self.x, 2, self.noise, TWO_STEP, eps_hat=self.zero)
        guided = guided_reverse_step(None, self.x, 2, self.zero, 0.0, self.noise, TWO_STEP, eps_hat=self.zero)
        assert torch.equal(plain, guided)

    def test_reference_equal_to_state_matches_plain(self):
        plain = ddpm_reverse_step(None, self.x, 2, self.noise, TWO_STEP, eps_hat=self.zero)
        guided = guided_reverse_step(None, self.x, 2, self.x.clone(), 3.0, self.noise, TWO_STEP, eps_hat=self.zero)
        assert torch.equal(plain, guided)

    def test_pulls_toward_reference(self):
        plain = ddpm_reverse_step(None, self.x, 2, self.zero, TWO_STEP, eps_hat=self.zero)
        guided = guided_reverse_step(None, self.x, 2, self.zero, 1.0, self.zero, TWO_STEP, eps_hat=self.zero)
        assert torch.allclose(guided, torch.full_like(self.x, 1.0 / 0.9 - 0.38), rtol=1e-12)
        assert bool((guided.abs() < plain.abs()).all())

    def test_negative_scale_rejected(self):
        with pytest.raises(ValueError):
            guided_reverse_step(None, self.x, 2, self.zero, -1.0, self.zero, TWO_STEP, eps_hat=self.zero)


class TestPurifierConfig:
    def test_guidance_requires_ddpm(self):
        with pytest.raises(ValidationError):
            PurifierConfig(sampler="ddim", runs=[RunSetting(guidance_scale=1.0)])

    def test_gns_levels_must_not_decrease(self):
        with pytest.raises(ConfigError):
            PurifierConfig.gns([50, 10])

    def test_gdmp_needs_a_run(self):
        with pytest.raises(ConfigError):
            PurifierConfig.gdmp(n_runs=0)

    def test_stride(self):
        assert PurifierConfig.diffpure().stride == 1
        assert PurifierConfig.diffpure(stride=5).stride == 5
        assert PurifierConfig.diffpure().with_stride(4).reverse_steps == 4
        assert PurifierConfig.diffpure(stride=4).with_stride(1).reverse_steps == "full"

    def test_bad_stride(self):
        with pytest.raises(ValidationError):
            PurifierConfig(reverse_steps=0)

    def test_reverse_calls(self):
        assert reverse_calls(0, 5) == 0
        assert reverse_calls(7, 5) == 2
        assert reverse_calls(100, 5) == 20
        assert reverse_calls(100, 1) == 100


class TestPurify:
    def test_zero_plan_returns_input(self, oracle_denoiser, small_schedule, unit_square_batch):
        x, _ = unit_square_batch
        streams = NoiseStreams.positional(0, x.shape[0])
        out = purify(x, NoisePlan.constant(0, x.shape[0]), oracle_denoiser, small_schedule, PurifierConfig.diffpure(), streams)
        assert torch.equal(out, x)

    def test_level_zero_rows_untouched_in_mixed_batch(self, oracle_denoiser, small_schedule, unit_square_batch):
        x = unit_square_batch[0][:4]
        plan = NoisePlan((0, 10, 0, 30))
        out = purify(x, plan, oracle_denoiser, small_schedule, PurifierConfig.diffpure(), NoiseStreams.positional(1, 4))
        assert torch.equal(out[0], x[0]) and torch.equal(out[2], x[2])
        assert not torch.equal(out[1], x[1])

    def test_strided_ddim_call_counts(self):
        schedule = default_schedule()
        d = GaussianOracleDenoiser([0.0, 0.0], 1.0, schedule).double()
        x = torch.zeros(3, 2, dtype=torch.float64)
        trace = PurifyTrace()
        cfg = PurifierConfig.diffpure(sampler="ddim", stride=5)
        purify(x, NoisePlan((0, 7, 100)), d, schedule, cfg, NoiseStreams.positional(0, 3), trace=trace)
        assert trace.calls == [0, 2, 20]
        assert trace.levels == [(0, 7, 100)]
        assert trace.wall_seconds >= 0.0

    @pytest.mark.parametrize(
        "cfg",
        [
            PurifierConfig.diffpure(),
            PurifierConfig.diffpure(stride=3),
            PurifierConfig.diffpure(sampler="ddim"),
            PurifierConfig.diffpure(sampler="ddim", stride=4),
            PurifierConfig.gdmp(n_runs=2, guidance_scale=0.5),
            PurifierConfig.gns(["plan", 25]),
        ],
    )
    def test_constant_plan_matches_shared_baseline(self, cfg, oracle_denoiser, small_schedule, unit_square_batch):
        x, _ = unit_square_batch
        n = x.shape[0]
        ids = list(range(100, 100 + n))
        ours = purify(x, NoisePlan.constant(20, n), oracle_denoiser, small_schedule, cfg, NoiseStreams(7, ids))
        shared = purify_shared(x, 20, oracle_denoiser, small_schedule, cfg, NoiseStreams(7, ids))
        assert torch.equal(ours, shared)

    def test_batch_equals_row_by_row(self, oracle_denoiser, small_schedule, unit_square_batch):
        x = unit_square_batch[0][:5]
        plan = NoisePlan((3, 0, 17, 50, 17))
        ids = [9, 8, 7, 6, 5]
        cfg = PurifierConfig.gdmp(n_runs=2, guidance_scale=0.2)
        batch = purify(x, plan, oracle_denoiser, small_schedule, cfg, NoiseStreams(3, ids))
        for i in range(5):
            row = purify(x[i : i + 1], plan.take([i]), oracle_denoiser, small_schedule, cfg, NoiseStreams(3, [ids[i]]))
            assert torch.allclose(batch[i : i + 1], row, rtol=1e-12, atol=1e-12)

    def test_same_streams_reproduce(self, oracle_denoiser, small_schedule, unit_square_batch):
        x, _ = unit_square_batch
        plan = NoisePlan.constant(15, x.shape[0])
        cfg = PurifierConfig.diffpure()
        a = purify(x, plan, oracle_denoiser, small_schedule, cfg, NoiseStreams.positional(4, x.shape[0]))
        b = purify(x, plan, oracle_denoiser, small_schedule, cfg, NoiseStreams.positional(4, x.shape[0]))
        c = purify(x, plan, oracle_denoiser, small_schedule, cfg, NoiseStreams.positional(5, x.shape[0]))
        assert torch.equal(a, b)
        assert not torch.equal(a, c)

    def test_gns_trace_records_each_run(self, oracle_denoiser, small_schedule, unit_square_batch):
        x = unit_square_batch[0][:2]
        trace = PurifyTrace()
        cfg = PurifierConfig.gns(["plan", 10, 20])
        purify(x, NoisePlan((4, 0)), oracle_denoiser, small_schedule, cfg, NoiseStreams.positional(0, 2), trace=trace)
        assert trace.levels == [(4, 0), (10, 10), (20, 20)]
        assert trace.run_count == 3
        assert trace.calls == [34, 30]

    def test_plan_length_mismatch(self, oracle_denoiser, small_schedule, unit_square_batch):
        x, _ = unit_square_batch
        with pytest.raises(ShapeMismatchError):
            purify(x, NoisePlan.constant(5, 3), oracle_denoiser, small_schedule, PurifierConfig.diffpure(), NoiseStreams.positional(0, x.shape[0]))

    def test_stream_count_mismatch(self, oracle_denoiser, small_schedule, unit_square_batch):
        x, _ = unit_square_batch
        with pytest.raises(ShapeMismatchError):
            purify(x, NoisePlan.constant(5, x.shape[0]), oracle_denoiser, small_schedule, PurifierConfig.diffpure(), NoiseStreams.positional(0, 2))

    def test_plan_beyond_schedule(self, oracle_denoiser, small_schedule, unit_square_batch):
        x = unit_square_batch[0][:1]
        with pytest.raises(RangeError):
            purify(x, NoisePlan((51,)), oracle_denoiser, small_schedule, PurifierConfig.diffpure(), NoiseStreams.positional(0, 1))


@pytest.mark.slow
def test_exact_denoiser_preserves_unit_variance_gaussian(small_schedule):
    # For N(mu0, I) data the ancestral step with the exact predictor is the true reverse kernel.
    mu0 = torch.tensor([1.0, -0.5], dtype=torch.float64)
    d = GaussianOracleDenoiser(mu0.tolist(), 1.0, small_schedule).double()
    n = 4000
    x0 = mu0 + torch.randn(n, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    out = purify(x0, NoisePlan.constant(30, n), d, small_schedule, PurifierConfig.diffpure(), NoiseStreams.positional(1, n))
    mean_se = 1.0 / math.sqrt(n)
    var_se = math.sqrt(2.0 / (n - 1))
    assert torch.all((out.mean(dim=0) - mu0).abs() < 4 * mean_se)
    assert torch.all((out.var(dim=0) - 1.0).abs() < 4 * var_se)
