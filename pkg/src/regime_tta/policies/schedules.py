"""
Similarity-modulated learning rate and loss-driven early stopping
"""
import logging
import typing

logger = logging.getLogger(__name__)


def rg_lr(alpha_base: float, gamma: float, sim: float) -> float:
    """
    Learning rate scaled by regime novelty

    ``alpha_base * (1 + gamma * (1 - sim))``, so a perfectly matching
    regime adapts at ``alpha_base`` and a completely novel one at
    ``(1 + gamma) * alpha_base``.

    Parameters
    ----------
    alpha_base: float
        Base learning rate.
    gamma: float
        Novelty gain.
    sim: float
        Best-match similarity in ``[0, 1]``. Values outside the range
        are clamped with a warning.

    Examples
    --------

    .. testcode:: rg_lr

       from regime_tta.policies import rg_lr

       assert rg_lr(3e-4, 0.67, 1.0) == 3e-4
    """
    if not 0.0 <= sim <= 1.0:
        logger.warning("Similarity %.6g outside [0, 1], clamping", sim)
        sim = min(max(sim, 0.0), 1.0)
    return alpha_base * (1.0 + gamma * (1.0 - sim))


def relative_improvement(prev: float, curr: float) -> float:
    """``(prev - curr) / |prev|``, 0 when ``prev`` is 0"""
    if prev == 0:
        return 0.0
    return (prev - curr) / abs(prev)


def early_stop_check(
    history: typing.Sequence[float],
    k_min: int = 5,
    patience: int = 3,
    eps_improve: float = 0.005,
) -> bool:
    """
    Whether loss-driven early stopping halts after the latest step

    ``history[0]`` is the loss before adaptation and ``history[k]`` the
    loss after step ``k``. Steps after ``k_min`` whose relative
    improvement is below ``eps_improve`` increment a counter, any
    larger improvement resets it, and adaptation halts once the counter
    reaches ``patience``.

    Parameters
    ----------
    history: list[float]
        Losses before adaptation and after each step so far.
    k_min: int
        Steps that always run.
    patience: int
        Consecutive stalled steps that halt.
    eps_improve: float
        Relative improvement threshold.

    Returns
    -------
    bool
        ``True`` if adaptation should stop.
    """
    if len(history) == 0:
        raise ValueError("Early stopping needs a non-empty loss history")
    step = len(history) - 1
    if step <= k_min:
        return False
    stalled = 0
    for k in range(k_min + 1, step + 1):
        if relative_improvement(history[k - 1], history[k]) < eps_improve:
            stalled += 1
        else:
            stalled = 0
    return stalled >= patience
