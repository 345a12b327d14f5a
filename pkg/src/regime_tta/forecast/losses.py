"""
SmoothL1 (Huber-style) loss
"""
import numpy as np


def _errors(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"Shape mismatch: {pred.shape} vs {target.shape}")
    return pred - target


def smooth_l1(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> float:
    """
    Mean SmoothL1 loss

    ``0.5 * e**2 / delta`` for ``|e| < delta``, else ``|e| - 0.5 * delta``,
    averaged over all elements.

    Examples
    --------

    .. testcode:: smooth_l1

       from regime_tta.forecast.losses import smooth_l1

       assert smooth_l1([0.5], [0.0]) == 0.125
       assert smooth_l1([2.0], [0.0]) == 1.5
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    e = _errors(pred, target)
    a = np.abs(e)
    loss = np.where(a < delta, 0.5 * e**2 / delta, a - 0.5 * delta)
    return float(loss.mean())


def smooth_l1_window_grad(
    pred: np.ndarray, target: np.ndarray, delta: float = 1.0
) -> np.ndarray:
    """
    Gradient of each window's own mean loss with respect to its forecast

    For ``(n, H)`` inputs the rows are the gradients of the per-window
    loss ``mean_h loss(e[i, h])``.
    """
    e = _errors(pred, target)
    g = np.where(np.abs(e) < delta, e / delta, np.sign(e))
    return g / e.shape[-1]


def smooth_l1_grad(pred: np.ndarray, target: np.ndarray, delta: float = 1.0) -> np.ndarray:
    """Gradient of :py:func:`smooth_l1` (mean over all elements) w.r.t. ``pred``"""
    g = smooth_l1_window_grad(pred, target, delta)
    return g / (g.shape[0] if g.ndim > 1 else 1)
