import numpy as np
import pytest
import torch

from ssni.diffusion.nets import DerivedScore
from ssni.diffusion.schedule import default_schedule
from ssni.errors import ConfigError, ShapeMismatchError
from ssni.purification.purify import PurifierConfig, PurifyTrace
from ssni.scoring.eps import EPSConfig
from ssni.scoring.reweight import ReweightSpec
from ssni.services.pipeline import DefensePipeline, defend
from ssni.utils.rng import NoiseStreams


def test_zero_level_defense_is_the_classifier(oracle_pipeline, unit_square_batch, linear_classifier):
    x, _ = unit_square_batch
    pipeline = oracle_pipeline.with_spec(ReweightSpec(kind="sigmoid", t_star=0, b=0.0, tau=1.0))
    result = pipeline.defend(x, seed=0)
    assert result.plan.levels == (0,) * x.shape[0]
    assert torch.equal(result.purified, x)
    assert torch.equal(result.labels, linear_classifier(x).argmax(dim=1))


def test_defend_outputs(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    result = oracle_pipeline.defend(x, seed=3)
    assert result.labels.shape == (x.shape[0],)
    assert result.logits.shape == (x.shape[0], 2)
    assert result.purified.shape == x.shape
    assert len(result.plan) == x.shape[0]
    assert result.norms.shape == (x.shape[0],)
    assert all(0 <= v <= 20 for v in result.plan.levels)
    assert result.plan_seconds >= 0 and result.purify_seconds >= 0


def test_same_seed_reproduces(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    a = oracle_pipeline.defend(x, seed=5)
    b = oracle_pipeline.defend(x, seed=5)
    assert a.plan == b.plan
    assert torch.equal(a.purified, b.purified)
    np.testing.assert_array_equal(a.norms, b.norms)


def test_permuted_batch_gets_permuted_outputs(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    perm = torch.randperm(x.shape[0], generator=torch.Generator().manual_seed(0))
    base = oracle_pipeline.defend(x, seed=1)
    shuffled = oracle_pipeline.defend(x[perm], seed=1)
    assert shuffled.plan.levels == base.plan.take(perm.tolist()).levels
    assert torch.equal(shuffled.labels, base.labels[perm])
    assert torch.allclose(shuffled.purified, base.purified[perm], rtol=1e-12, atol=1e-12)


def test_trace_is_attached(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    trace = PurifyTrace()
    result = oracle_pipeline.defend(x, seed=0, trace=trace)
    assert result.trace is trace
    assert trace.levels == [result.plan.levels]
    assert trace.calls == list(result.plan.levels)


def test_explicit_sample_ids_must_match_rows(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    with pytest.raises(ShapeMismatchError):
        oracle_pipeline.defend(x, seed=0, sample_ids=[1, 2, 3])


def test_constant_spec_skips_norms(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    pipeline = oracle_pipeline.with_spec(ReweightSpec.constant(12))
    plan, norms = pipeline.plan_for(x, seed=0)
    assert norms is None
    assert plan.levels == (12,) * x.shape[0]


def test_undefended_pipeline(linear_classifier, unit_square_batch):
    x, _ = unit_square_batch
    pipeline = DefensePipeline.undefended(linear_classifier).validate()
    assert not pipeline.defended
    result = pipeline.defend(x, seed=0)
    assert result.plan is None and result.norms is None
    assert torch.equal(result.purified, x)
    assert torch.equal(result.labels, linear_classifier(x).argmax(dim=1))


def test_module_level_defend_matches_pipeline(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    p = oracle_pipeline
    result = defend(x, p.score, p.stats, p.spec, p.denoiser, p.schedule, p.purifier, p.classifier, 4)
    expected = p.defend(x, seed=4)
    assert result.plan == expected.plan
    assert torch.equal(result.purified, expected.purified)


def test_stride_override(oracle_pipeline, unit_square_batch):
    x, _ = unit_square_batch
    plan, _ = oracle_pipeline.plan_for(x, seed=0)
    trace = PurifyTrace()
    oracle_pipeline.purify(x, plan, NoiseStreams.positional(0, x.shape[0]), stride=5, trace=trace)
    assert trace.calls == [-(-v // 5) for v in plan.levels]


class TestValidate:
    def test_missing_stats(self, oracle_pipeline):
        with pytest.raises(ConfigError):
            oracle_pipeline._replace(stats=None).validate()

    def test_missing_score(self, oracle_pipeline):
        with pytest.raises(ConfigError):
            oracle_pipeline._replace(score=None).validate()

    def test_missing_spec(self, oracle_pipeline):
        with pytest.raises(ConfigError):
            oracle_pipeline._replace(spec=None).validate()

    def test_statistic_mismatch(self, oracle_pipeline):
        with pytest.raises(ConfigError, match="statistic"):
            oracle_pipeline.with_eps_config(EPSConfig(statistic="single")).validate()

    def test_schedule_length_mismatch(self, oracle_pipeline):
        with pytest.raises(ConfigError, match="T="):
            oracle_pipeline._replace(schedule=default_schedule()).validate()

    def test_constant_spec_needs_no_calibration(self, oracle_denoiser, small_schedule, linear_classifier):
        pipeline = DefensePipeline(
            linear_classifier,
            denoiser=oracle_denoiser,
            schedule=small_schedule,
            spec=ReweightSpec.constant(10),
            purifier=PurifierConfig.diffpure(),
        )
        assert pipeline.validate() is pipeline

    def test_copies_do_not_alias(self, oracle_pipeline):
        other = oracle_pipeline.with_purifier(PurifierConfig.diffpure(sampler="ddim"))
        assert other.purifier.sampler == "ddim"
        assert oracle_pipeline.purifier.sampler == "ddpm"
        assert isinstance(other.score, DerivedScore)
