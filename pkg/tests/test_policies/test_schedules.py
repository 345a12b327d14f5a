import numpy as np
import pytest

from regime_tta.policies import early_stop_check, relative_improvement, rg_lr


def test_rg_lr():
    assert rg_lr(3e-4, 0.67, 1.0) == 3e-4
    assert rg_lr(3e-4, 0.67, 0.5) == pytest.approx(1.335 * 3e-4)
    assert rg_lr(3e-4, 0.67, 0.0) == pytest.approx(1.67 * 3e-4)
    assert rg_lr(3e-4, 0.0, 0.2) == 3e-4


def test_rg_lr_clamps(caplog):
    assert rg_lr(1e-3, 0.5, 1.5) == 1e-3
    assert rg_lr(1e-3, 0.5, -0.5) == pytest.approx(1.5e-3)
    assert "outside [0, 1]" in caplog.text


def test_relative_improvement():
    assert relative_improvement(1.0, 0.9) == pytest.approx(0.1)
    assert relative_improvement(-2.0, -3.0) == pytest.approx(0.5)
    assert relative_improvement(0.0, -1.0) == 0.0


def halting_step(history, **kwargs):
    for step in range(1, len(history)):
        if early_stop_check(history[: step + 1], **kwargs):
            return step
    return None


def test_improving_history_never_halts():
    history = list(0.9 ** np.arange(26))
    assert halting_step(history) is None


def test_flat_history_halts_at_step_eight():
    history = [1.0, 0.9, 0.81] + [0.81] * 23
    assert halting_step(history) == 8
    assert not early_stop_check(history[:8])
    assert early_stop_check(history[:9])


def test_fully_flat_history_halts_at_step_eight():
    assert halting_step([1.0] * 26) == 8


def test_improvement_resets_counter():
    # Steps 6 and 7 stall, step 8 improves, steps 9 to 11 stall
    history = list(0.9 ** np.arange(6))
    history += [history[-1]] * 2
    history.append(history[-1] * 0.5)
    history += [history[-1]] * 5

    assert halting_step(history) == 11


def test_zero_loss_counts_as_converged():
    assert halting_step([0.0] * 12) == 8


def test_custom_thresholds():
    history = list(0.9 ** np.arange(26))
    assert halting_step(history, eps_improve=0.5) == 8
    assert halting_step(history, k_min=2, patience=1, eps_improve=0.5) == 3


def test_empty_history():
    with pytest.raises(ValueError):
        early_stop_check([])
