import logging

import numpy as np
import pytest

from regime_tta.core import HarnessConfig, InsufficientDataError
from regime_tta.datagen import ScenarioSpec, generate
from regime_tta.forecast import ModelSpec, TrainingConfig
from regime_tta.harness import StreamAbortedError, iter_batches, n_batches, pretrain, run_stream
from regime_tta.policies import AdaptationAbortedError, PolicyConfig
from regime_tta.policies.adaptive import AdaptivePolicy

HORIZON = 8
SEQ_LEN = 24
POLICIES = ("tta", "ewc", "dynatta", "rgtta", "rgtta_ewc", "rgtta_dynatta")


@pytest.fixture(scope="module")
def config():
    return HarnessConfig(
        initial_train_size=200, batch_size=200, seq_len=SEQ_LEN, max_batches=3, eval_sample=32
    )


@pytest.fixture(scope="module")
def training():
    return TrainingConfig(epochs=2)


@pytest.fixture(scope="module")
def dataset():
    return generate(ScenarioSpec("recurring", length=1500, seed=0))


@pytest.fixture(scope="module")
def model(dataset, config, training):
    return pretrain(dataset, ModelSpec("dlinear", SEQ_LEN), HORIZON, 0, config, training)


def test_full_protocol_batch_count(training):
    n = 720 + 750 * 10 + 96
    dataset = generate(ScenarioSpec("stable", length=n, seed=0))
    records = run_stream(
        dataset,
        ModelSpec("dlinear"),
        PolicyConfig(kind="tta"),
        96,
        0,
        training=training,
    )

    assert len(records) == 10
    assert [r.batch_index for r in records] == list(range(1, 11))
    assert records[0].batch_start == 720
    assert records[-1].batch_end == 720 + 7500


def test_no_lookahead_gives_no_records(caplog, training):
    dataset = generate(ScenarioSpec("stable", length=720 + 750, seed=0))
    with caplog.at_level(logging.WARNING):
        records = run_stream(
            dataset, ModelSpec("dlinear"), PolicyConfig(kind="tta"), 96, 0, training=training
        )

    assert records == []
    assert "fewer than 96 rows of lookahead" in caplog.text


def test_too_short_dataset(training):
    dataset = generate(ScenarioSpec("stable", length=1470, seed=0))
    with pytest.raises(InsufficientDataError):
        run_stream(
            dataset,
            ModelSpec("dlinear"),
            PolicyConfig(kind="tta"),
            96,
            0,
            config=HarnessConfig(initial_train_size=1000),
            training=training,
        )


def test_policies_share_protocol(dataset, config, model):
    runs = {
        kind: run_stream(
            dataset,
            ModelSpec("dlinear", SEQ_LEN),
            PolicyConfig(kind=kind),
            HORIZON,
            0,
            config=config,
            model=model,
        )
        for kind in POLICIES
    }

    reference = runs["tta"]
    assert len(reference) == 3
    for kind, records in runs.items():
        assert [r.policy for r in records] == [kind] * 3
        assert [(r.batch_start, r.batch_end) for r in records] == [
            (r.batch_start, r.batch_end) for r in reference
        ]
        assert [r.truth_digest for r in records] == [r.truth_digest for r in reference]
        assert [r.plan_digest for r in records] == [r.plan_digest for r in reference]


def test_run_is_deterministic(dataset, config, model):
    def once():
        return run_stream(
            dataset,
            ModelSpec("dlinear", SEQ_LEN),
            PolicyConfig(kind="rgtta_dynatta"),
            HORIZON,
            1,
            config=config,
            model=model,
        )

    a, b = once(), once()
    assert [r.metrics for r in a] == [r.metrics for r in b]
    assert [r.report.lr_used for r in a] == [r.report.lr_used for r in b]


def test_pretrained_model_is_not_modified(dataset, config, model):
    head = model.weights.head.copy()
    run_stream(
        dataset,
        ModelSpec("dlinear", SEQ_LEN),
        PolicyConfig(kind="tta"),
        HORIZON,
        0,
        config=config,
        model=model,
    )
    assert np.array_equal(model.weights.head, head)


def test_record_to_dict(dataset, config, model):
    records = run_stream(
        dataset,
        ModelSpec("dlinear", SEQ_LEN),
        PolicyConfig(kind="rgtta"),
        HORIZON,
        0,
        config=config,
        model=model,
    )
    row = records[0].to_dict()

    assert row["policy"] == "rgtta"
    assert row["dataset"] == "synth_recurring"
    assert row["horizon"] == HORIZON
    assert len(row["lr_used"]) == row["steps_used"]
    assert row["mean_lr"] == pytest.approx(np.mean(row["lr_used"]))
    assert "lr_used" not in records[0].to_dict(include_lr=False)
    assert records[0].adapt_time_seconds >= 0


def test_abort_carries_partial_records(monkeypatch, dataset, config, model):
    original = AdaptivePolicy.adapt_batch

    def failing(self, live, batch):
        if batch.index == 2:
            raise AdaptationAbortedError("boom", {"batch_index": batch.index})
        return original(self, live, batch)

    monkeypatch.setattr(AdaptivePolicy, "adapt_batch", failing)
    with pytest.raises(StreamAbortedError) as exc_info:
        run_stream(
            dataset,
            ModelSpec("dlinear", SEQ_LEN),
            PolicyConfig(kind="tta"),
            HORIZON,
            0,
            config=config,
            model=model,
        )

    assert len(exc_info.value.records) == 1
    assert exc_info.value.diagnostics == {"stage": "adapt", "batch_index": 2}


def test_pretrain_divergence_aborts(dataset, config):
    with pytest.raises(StreamAbortedError) as exc_info:
        run_stream(
            dataset,
            ModelSpec("dlinear", SEQ_LEN),
            PolicyConfig(kind="tta"),
            HORIZON,
            0,
            config=config,
            training=TrainingConfig(epochs=1, lr=float("inf")),
        )

    assert exc_info.value.records == []
    assert exc_info.value.diagnostics["stage"] == "pretrain"
    assert exc_info.value.diagnostics["batch_index"] == 0
    assert exc_info.value.diagnostics["cause"] == "TrainingDivergedError"


def test_retrain_divergence_aborts_stream(dataset, config, model):
    with pytest.raises(StreamAbortedError) as exc_info:
        run_stream(
            dataset,
            ModelSpec("dlinear", SEQ_LEN),
            PolicyConfig(kind="retrain"),
            HORIZON,
            0,
            config=config,
            model=model,
            training=TrainingConfig(epochs=1, lr=float("inf")),
        )

    assert exc_info.value.records == []
    assert exc_info.value.diagnostics["stage"] == "adapt"
    assert exc_info.value.diagnostics["where"] == "retrain"
    assert exc_info.value.diagnostics["batch_index"] == 1


def test_iter_batches(dataset, config):
    batches = list(iter_batches(dataset, config, HORIZON, 0))

    assert len(batches) == n_batches(dataset, config, HORIZON) == 3
    first = batches[0]
    assert (first.start, first.end) == (200, 400)
    assert len(first.windows) == 200 - SEQ_LEN - HORIZON + 1
    assert first.windows.origins[0] == 200
    assert len(first.history) == 400
    assert len(first.plan.step_idx) == config.plan_steps
    assert first.scaler.data_max == first.rows.max()


def test_short_batches_reach_into_history(dataset):
    config = HarnessConfig(initial_train_size=200, batch_size=40, seq_len=SEQ_LEN, max_batches=2)
    batch = next(iter_batches(dataset, config, HORIZON, 0))

    assert batch.windows.origins[0] == batch.end - config.min_span(HORIZON)
    assert len(batch.windows) == 32
    assert len(batch.rows) == 40
