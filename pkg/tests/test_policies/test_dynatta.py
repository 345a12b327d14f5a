import numpy as np
import pytest

from regime_tta.policies import (
    DynattaState,
    PolicyConfig,
    ReservoirBuffer,
    dynatta_lr,
    normalised_distance,
)
from regime_tta.policies.dynatta import loss_zscore, shift_score


@pytest.fixture
def config():
    return PolicyConfig(kind="dynatta", warmup_factor=0.0)


@pytest.fixture
def state(config):
    return DynattaState.fresh(config, np.random.default_rng(0))


def test_cold_start_is_midpoint(state, config):
    alpha, state = dynatta_lr(state, 0.5, np.zeros(4), config)

    assert alpha == pytest.approx(5.5e-4)
    assert list(state.losses) == [0.5]
    assert len(state.rtab) == 1
    assert len(state.rdb) == 1
    assert state.steps_seen == 1


def test_large_shift_saturates(state, config):
    state.shift_ema = 1e6
    alpha, _ = dynatta_lr(state, 0.5, np.zeros(4), config)
    assert alpha == pytest.approx(1e-3)


def test_warmup_holds_minimum():
    config = PolicyConfig(kind="dynatta")
    assert config.warmup_steps == 60

    state = DynattaState.fresh(config, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    alphas = [dynatta_lr(state, rng.uniform(), rng.normal(size=3), config)[0] for _ in range(61)]

    assert all(a == 1e-4 for a in alphas[:60])
    assert alphas[60] > 1e-4


def test_loss_zscore():
    assert loss_zscore(10.0, [1.0, 2.0]) == 0.0
    assert loss_zscore(2.0, [1.0, 2.0, 3.0]) == 0.0
    assert loss_zscore(4.0, [1.0, 2.0, 3.0]) == pytest.approx(2.0 / np.std([1.0, 2.0, 3.0]))
    assert loss_zscore(4.0, [1.0, 1.0, 1.0]) == 0.0


def test_normalised_distance():
    assert normalised_distance(np.zeros(2), [np.ones(2)]) == 0.0
    buffer = [np.array([-1.0, 0.0]), np.array([1.0, 0.0])]
    assert normalised_distance(np.zeros(2), buffer) == pytest.approx(1.0)
    assert normalised_distance(np.array([0.0, 3.0]), buffer) == pytest.approx(np.sqrt(10.0))
    assert normalised_distance(np.zeros(2), [np.ones(2), np.ones(2)]) == 0.0


def test_shift_score_is_mean_of_components(state):
    state.losses.extend([1.0, 2.0, 3.0])
    state.rtab.extend([np.array([-1.0, 0.0]), np.array([1.0, 0.0])])

    expected = (2.0 / np.std([1.0, 2.0, 3.0]) + 1.0 + 0.0) / 3.0
    assert shift_score(4.0, np.zeros(2), state) == pytest.approx(expected)


def test_reservoir_buffer():
    buffer = ReservoirBuffer(3, np.random.default_rng(0))
    for i in range(10):
        buffer.push(np.array([float(i)]))

    assert len(buffer) == 3
    assert buffer.n_seen == 10
    assert all(0 <= item[0] < 10 for item in buffer.items)


def test_ring_buffer_capacity():
    config = PolicyConfig(kind="dynatta", rtab_capacity=4, warmup_factor=0.0)
    state = DynattaState.fresh(config, np.random.default_rng(0))
    for i in range(10):
        dynatta_lr(state, float(i), np.array([float(i)]), config)

    assert [e[0] for e in state.rtab] == [6.0, 7.0, 8.0, 9.0]
    assert list(state.losses) == [6.0, 7.0, 8.0, 9.0]


def test_reset_statistics_keeps_buffers(state, config):
    for i in range(5):
        dynatta_lr(state, float(i), np.array([float(i)]), config)
    state.reset_statistics()

    assert len(state.losses) == 0
    assert state.shift_ema == 0.0
    assert len(state.rtab) == 5
