import numpy as np
import pytest

from regime_tta.policies import (
    EwcState,
    blend_fisher,
    clamp_fisher,
    ewc_loss,
    ewc_penalty,
    ewc_penalty_grad,
    fisher_update,
)
from regime_tta.policies.ewc import fisher_from_gradients


def test_penalty_at_anchor():
    head = np.array([0.3, -1.2, 2.0])
    state = EwcState(np.ones(3), head.copy())
    assert ewc_penalty(head, state, 400.0) == 0.0


def test_unit_penalty():
    state = EwcState(np.ones(4), np.zeros(4))
    head = np.array([0.0, 1.0, 0.0, 0.0])

    assert ewc_penalty(head, state, 400.0) == pytest.approx(200.0)
    assert ewc_loss(1.5, head, state, 400.0) == pytest.approx(201.5)

    with pytest.raises(ValueError):
        ewc_loss(1.0, np.zeros(3), state, 400.0)


def test_penalty_gradient():
    rng = np.random.default_rng(0)
    state = EwcState(rng.uniform(size=5), rng.normal(size=5))
    head = rng.normal(size=5)
    grad = ewc_penalty_grad(head, state, 400.0)

    eps = 1e-6
    for i in range(5):
        p, m = head.copy(), head.copy()
        p[i] += eps
        m[i] -= eps
        fd = (ewc_penalty(p, state, 400.0) - ewc_penalty(m, state, 400.0)) / (2 * eps)
        assert grad[i] == pytest.approx(fd, rel=1e-5)


def test_first_update_taken_as_is():
    state = EwcState.fresh(np.zeros(3))
    new = np.array([1.0, 2.0, 3.0])
    head = np.array([0.5, 0.5, 0.5])

    updated = fisher_update(state, new, head)
    assert updated.initialised
    assert np.array_equal(updated.fisher, new)
    assert np.array_equal(updated.anchor, head)


def test_zero_gradients_halve_fisher():
    state = EwcState(np.array([2.0, 4.0]), np.zeros(2), initialised=True)
    zero = fisher_from_gradients(np.zeros((10, 2)))

    updated = fisher_update(state, zero, np.zeros(2))
    assert np.array_equal(zero, np.zeros(2))
    assert np.allclose(updated.fisher, [1.0, 2.0])


def test_constant_gradient_fisher():
    g = np.array([0.5, -2.0, 3.0])
    assert np.allclose(fisher_from_gradients(np.tile(g, (7, 1))), g**2)

    with pytest.raises(ValueError):
        fisher_from_gradients(np.zeros((0, 3)))


def test_fisher_clamp():
    F = fisher_from_gradients(np.array([[200.0, 1.0]]))
    assert np.array_equal(clamp_fisher(F), np.array([1e4, 1.0]))

    updated = fisher_update(EwcState.fresh(np.zeros(2)), F, np.zeros(2))
    assert updated.fisher[0] == 1e4


def test_blend():
    assert np.allclose(blend_fisher(np.array([1.0]), np.array([3.0])), [2.0])
    assert np.allclose(blend_fisher(np.array([1.0]), np.array([3.0]), decay=0.0), [3.0])


def test_reset_anchor():
    state = EwcState(np.ones(2), np.zeros(2), initialised=True)
    moved = state.reset_anchor(np.array([1.0, 2.0]))

    assert np.array_equal(moved.anchor, [1.0, 2.0])
    assert np.array_equal(moved.fisher, state.fisher)
    assert moved.initialised


def test_shape_mismatch():
    with pytest.raises(ValueError):
        EwcState(np.ones(2), np.zeros(3))
    with pytest.raises(ValueError):
        fisher_update(EwcState.fresh(np.zeros(2)), np.ones(3), np.zeros(2))
