import dataclasses

import numpy as np
import pytest

from regime_tta.core import HarnessConfig
from regime_tta.datagen import ScenarioSpec, generate
from regime_tta.forecast import ModelSpec, TrainingConfig
from regime_tta.forecast.base import LiveModel, unflatten
from regime_tta.harness import iter_batches, pretrain
from regime_tta.memory import RegimeMemory, make_entry
from regime_tta.policies import (
    AdaptationAbortedError,
    AdaptivePolicy,
    PolicyConfig,
    RetrainPolicy,
    build_policy,
)
from regime_tta.similarity import extract_features

HORIZON = 8
SEQ_LEN = 24


@pytest.fixture(scope="module")
def config():
    return HarnessConfig(
        initial_train_size=200,
        batch_size=200,
        seq_len=SEQ_LEN,
        max_batches=4,
        eval_sample=32,
        minibatch=16,
        fisher_samples=50,
    )


@pytest.fixture(scope="module")
def dataset():
    return generate(ScenarioSpec("recurring", length=1500, seed=3))


@pytest.fixture(scope="module")
def model(dataset, config):
    return pretrain(
        dataset, ModelSpec("dlinear", SEQ_LEN), HORIZON, 0, config, TrainingConfig(epochs=5)
    )


@pytest.fixture(scope="module")
def batches(dataset, config):
    return list(iter_batches(dataset, config, HORIZON, 0, n_steps=25))


def run(policy, model, batches):
    reports = []
    for batch in batches:
        model, report = policy.adapt_batch(model, batch)
        reports.append(report)
    return model, reports


def test_tta_runs_fixed_steps(model, batches):
    _, reports = run(AdaptivePolicy(PolicyConfig(kind="tta")), model, batches)

    assert len(reports) == 4
    for r in reports:
        assert r.steps_used == 20
        assert r.lr_used == [3e-4] * 20
        assert not r.loaded_checkpoint
        assert r.similarity is None
        assert not r.early_stopped


def test_ewc_runs_fixed_steps(model, batches):
    policy = AdaptivePolicy(PolicyConfig(kind="ewc"))
    live, reports = run(policy, model, batches[:2])

    assert [r.steps_used for r in reports] == [15, 15]
    assert policy.ewc_state.initialised
    assert np.array_equal(policy.ewc_state.anchor, live.weights.head)
    assert np.all(policy.ewc_state.fisher >= 0)


def test_ewc_fisher_sample_size(model, batches):
    batch = batches[0]
    truncated = dataclasses.replace(
        batch, plan=dataclasses.replace(batch.plan, fisher_idx=batch.plan.fisher_idx[:20])
    )

    small = AdaptivePolicy(PolicyConfig(kind="ewc", fisher_samples=20))
    small.adapt_batch(model, batch)
    reference = AdaptivePolicy(PolicyConfig(kind="ewc"))
    reference.adapt_batch(model, truncated)
    full = AdaptivePolicy(PolicyConfig(kind="ewc"))
    full.adapt_batch(model, batch)

    assert np.array_equal(small.ewc_state.fisher, reference.ewc_state.fisher)
    assert not np.array_equal(small.ewc_state.fisher, full.ewc_state.fisher)


def test_dynatta_warmup(model, batches):
    _, reports = run(AdaptivePolicy(PolicyConfig(kind="dynatta")), model, batches)

    for r in reports[:3]:
        assert r.steps_used == 20
        assert r.lr_used == [1e-4] * 20
    assert all(1e-4 < lr <= 1e-3 for lr in reports[3].lr_used)


def test_regime_guided_cold_start(model, batches):
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta"))
    _, report = policy.adapt_batch(model, batches[0])

    assert report.similarity == 0.0
    assert not report.loaded_checkpoint
    assert report.lr_used[0] == pytest.approx(1.67 * 3e-4)
    assert len(set(report.lr_used)) == 1
    assert 5 <= report.steps_used <= 25
    assert report.memory_size == 1
    assert not report.evicted


def test_regime_guided_uses_memory(model, batches):
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta", memory_capacity=2))
    _, reports = run(policy, model, batches)

    assert reports[1].similarity > 0.0
    assert [r.memory_size for r in reports] == [1, 2, 2, 2]
    assert [r.evicted_batch for r in reports] == [None, None, 1, 2]
    assert [e.metadata["batch_index"] for e in policy.memory.entries] == [3, 4]


def test_baseline_equivalence(model, batches):
    tta = AdaptivePolicy(PolicyConfig(kind="tta"))
    rg = AdaptivePolicy(
        PolicyConfig(kind="rgtta", gamma=0.0, tau=1.1, early_stopping=False)
    )
    tta_model, tta_reports = run(tta, model, batches)
    rg_model, rg_reports = run(rg, model, batches)

    assert np.array_equal(tta_model.weights.head, rg_model.weights.head)
    for a, b in zip(tta_reports, rg_reports):
        assert a.lr_used == b.lr_used
        assert a.loss_after == b.loss_after
        assert not b.loaded_checkpoint


def test_checkpoint_loaded_when_better(model, batches):
    batch = batches[0]
    head = np.zeros_like(model.weights.head)
    # Constant forecast far outside the scaled range
    unflatten(head, model.forecaster.head_shapes)[1][:] = 10.0
    bad = LiveModel(model.forecaster, model.weights.with_head(head), model.scaler)
    memory = RegimeMemory()
    memory.store(
        make_entry(
            model.weights,
            extract_features(batch.rows, batch.season_length),
            model.scaler,
            0,
            0.0,
            "rgtta",
        )
    )
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta"), memory=memory)
    live, report = policy.adapt_batch(bad, batch)

    assert report.similarity == pytest.approx(1.0)
    assert report.loaded_checkpoint
    assert report.loss_ckpt < 0.7 * report.loss_before
    assert report.lr_used[0] == pytest.approx(3e-4)
    assert live.scaler == model.scaler
    assert report.steps_used <= 25


def test_checkpoint_rejected_by_loss_gate(model, batches):
    batch = batches[0]
    memory = RegimeMemory()
    memory.store(
        make_entry(
            model.weights,
            extract_features(batch.rows, batch.season_length),
            batch.scaler,
            0,
            0.0,
            "rgtta",
        )
    )
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta"), memory=memory)
    live = LiveModel(model.forecaster, model.weights.copy(), batch.scaler)
    _, report = policy.adapt_batch(live, batch)

    assert not report.loaded_checkpoint
    assert report.loss_ckpt == pytest.approx(report.loss_before)


def test_early_stopping_halts(model, batches):
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta", eps_improve=0.5))
    _, report = policy.adapt_batch(model, batches[0])

    assert report.early_stopped
    assert report.steps_used == 8


def test_backbone_is_frozen(dataset, config, batches):
    gru = pretrain(
        dataset,
        ModelSpec("gru_small", SEQ_LEN, hidden=4),
        HORIZON,
        0,
        config,
        TrainingConfig(epochs=1),
    )
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta_ewc"))
    live, report = policy.adapt_batch(gru, batches[0])

    assert np.array_equal(live.weights.backbone, gru.weights.backbone)
    assert not np.array_equal(live.weights.head, gru.weights.head)
    assert report.steps_used > 0


def test_rg_dynatta_combines_schedules(model, batches):
    policy = AdaptivePolicy(PolicyConfig(kind="rgtta_dynatta"))
    _, report = policy.adapt_batch(model, batches[0])

    assert report.lr_used[0] == 1e-4
    assert report.memory_size == 1
    assert policy.dynatta_state.steps_seen == report.steps_used


def test_non_finite_loss_aborts(model, batches):
    broken = LiveModel(
        model.forecaster,
        model.weights.with_head(np.full_like(model.weights.head, np.nan)),
        model.scaler,
    )
    with pytest.raises(AdaptationAbortedError) as exc_info:
        AdaptivePolicy(PolicyConfig(kind="tta")).adapt_batch(broken, batches[0])

    assert exc_info.value.diagnostics["step"] == 0
    assert exc_info.value.diagnostics["batch_index"] == 1


def test_short_plan_is_rejected(dataset, config, model):
    batch = next(iter_batches(dataset, config, HORIZON, 0, n_steps=10))
    with pytest.raises(ValueError, match="plan holds 10 steps"):
        AdaptivePolicy(PolicyConfig(kind="tta")).adapt_batch(model, batch)


def test_retrain_policy(model, batches):
    policy = build_policy(PolicyConfig(kind="retrain"), seed=0, training=TrainingConfig(epochs=1))
    assert isinstance(policy, RetrainPolicy)

    live, report = policy.adapt_batch(model, batches[0])
    assert report.steps_used > 0
    assert report.lr_used == [1e-3]
    assert np.isfinite(report.loss_after)
    assert live.scaler.data_max == pytest.approx(batches[0].history.max())


def test_retrain_divergence_aborts(model, batches):
    training = TrainingConfig(epochs=1, lr=float("inf"))
    policy = RetrainPolicy(PolicyConfig(kind="retrain"), training=training)

    with pytest.raises(AdaptationAbortedError) as exc_info:
        policy.adapt_batch(model, batches[0])

    assert exc_info.value.diagnostics["where"] == "retrain"
    assert exc_info.value.diagnostics["batch_index"] == 1
    assert exc_info.value.diagnostics["cause"] == "TrainingDivergedError"


def test_retrain_rejects_gru(dataset, config, batches):
    gru = pretrain(
        dataset,
        ModelSpec("gru_small", SEQ_LEN, hidden=4),
        HORIZON,
        0,
        config,
        TrainingConfig(epochs=0),
    )
    with pytest.raises(ValueError, match="dlinear only"):
        RetrainPolicy(PolicyConfig(kind="retrain")).adapt_batch(gru, batches[0])


def test_policy_kind_checks():
    with pytest.raises(ValueError):
        AdaptivePolicy(PolicyConfig(kind="retrain"))
    with pytest.raises(ValueError):
        RetrainPolicy(PolicyConfig(kind="tta"))
    assert isinstance(build_policy(PolicyConfig(kind="ewc")), AdaptivePolicy)
