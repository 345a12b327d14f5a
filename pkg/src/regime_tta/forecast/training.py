"""
Loss gradients and full-model training
"""
import dataclasses
import logging
import typing

import numpy as np

from regime_tta.core import WindowSet
from regime_tta.forecast.base import BaseForecaster, ModelWeights
from regime_tta.forecast.losses import smooth_l1, smooth_l1_grad, smooth_l1_window_grad
from regime_tta.forecast.optim import AdamState, adam_step

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite"""


def head_loss_and_grad(
    forecaster: BaseForecaster,
    head: np.ndarray,
    Z: np.ndarray,
    Y: np.ndarray,
    delta: float = 1.0,
) -> typing.Tuple[float, np.ndarray]:
    """
    Mean SmoothL1 loss and its gradient w.r.t. the head parameters

    Parameters
    ----------
    forecaster: BaseForecaster
        Architecture.
    head: numpy.ndarray
        Head parameters.
    Z: numpy.ndarray
        Backbone features of the windows (treated as constants).
    Y: numpy.ndarray
        Scaled targets ``(n, H)``.
    delta: float
        SmoothL1 threshold.
    """
    pred, cache = forecaster.head_forward(head, Z)
    loss = smooth_l1(pred, Y, delta)
    terms, _ = forecaster.head_backward(head, cache, smooth_l1_grad(pred, Y, delta))
    return loss, forecaster.gradient_from_terms(terms)


def head_loss(
    forecaster: BaseForecaster, head: np.ndarray, Z: np.ndarray, Y: np.ndarray, delta: float = 1.0
) -> float:
    pred, _ = forecaster.head_forward(head, Z)
    return smooth_l1(pred, Y, delta)


def head_gradient(
    forecaster: BaseForecaster,
    weights: ModelWeights,
    windows: WindowSet,
    delta: float = 1.0,
) -> np.ndarray:
    """
    Exact gradient of the mean loss w.r.t. the head only

    The backbone outputs are computed once and treated as constants.
    """
    if len(windows) == 0:
        raise ValueError("Cannot compute a gradient on an empty minibatch")
    Z = forecaster.embed(weights, windows.inputs)
    _, grad = head_loss_and_grad(forecaster, weights.head, Z, windows.targets, delta)
    return grad


def head_fisher(
    forecaster: BaseForecaster,
    head: np.ndarray,
    Z: np.ndarray,
    Y: np.ndarray,
    delta: float = 1.0,
) -> np.ndarray:
    """
    Mean over windows of the squared per-window head gradient

    Each window's gradient is taken of its own mean loss over the
    horizon, giving the diagonal empirical Fisher information.
    """
    pred, cache = forecaster.head_forward(head, Z)
    dpred = smooth_l1_window_grad(pred, Y, delta)
    terms, _ = forecaster.head_backward(head, cache, dpred)
    return forecaster.squared_gradient_from_terms(terms) / len(Y)


def full_loss_and_grad(
    forecaster: BaseForecaster,
    weights: ModelWeights,
    X: np.ndarray,
    Y: np.ndarray,
    delta: float = 1.0,
) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """
    Mean loss and gradients of backbone and head parameters

    Returns
    -------
    tuple
        Loss, backbone gradient and head gradient.
    """
    Z, bb_cache = forecaster.backbone(weights, X, keep_cache=True)
    pred, cache = forecaster.head_forward(weights.head, Z)
    loss = smooth_l1(pred, Y, delta)
    terms, dZ = forecaster.head_backward(weights.head, cache, smooth_l1_grad(pred, Y, delta))
    g_backbone = forecaster.backbone_backward(weights, bb_cache, dZ)
    return loss, g_backbone, forecaster.gradient_from_terms(terms)


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    """
    Initial-training budget

    Parameters
    ----------
    epochs: int
        Maximum number of epochs, default 50.
    lr: float
        Adam learning rate, default ``1e-3``.
    minibatch: int
        Windows per gradient step, default 32.
    min_improvement: float
        Relative epoch-loss improvement below which an epoch counts as
        stalled, default ``1e-3``.
    patience: int
        Stalled epochs before halting, default 3.
    delta: float
        SmoothL1 threshold, default 1.
    """

    epochs: int = 50
    lr: float = 1e-3
    minibatch: int = 32
    min_improvement: float = 1e-3
    patience: int = 3
    delta: float = 1.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0 or self.minibatch <= 0 or self.delta <= 0:
            raise ValueError("lr, minibatch and delta must be positive")


@dataclasses.dataclass
class TrainingReport:
    """Full-data loss after each epoch, ``epoch_losses[0]`` before training"""

    epoch_losses: typing.List[float]
    steps: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses) - 1


def train_full(
    forecaster: BaseForecaster,
    weights: ModelWeights,
    windows: WindowSet,
    config: TrainingConfig,
    rng: np.random.Generator,
) -> typing.Tuple[ModelWeights, TrainingReport]:
    """
    Train backbone and head together with Adam

    Parameters
    ----------
    forecaster: BaseForecaster
        Architecture.
    weights: ModelWeights
        Starting weights, not modified.
    windows: WindowSet
        Scaled training windows.
    config: TrainingConfig
        Training budget.
    rng: numpy.random.Generator
        Generator used to shuffle windows each epoch.

    Returns
    -------
    tuple
        Trained weights and a :py:class:`TrainingReport`.

    Raises
    ------
    TrainingDivergedError
        If a loss becomes non-finite.
    """
    if len(windows) == 0:
        raise ValueError("Cannot train on an empty window set")
    X, Y = windows.inputs, windows.targets
    n_bb = weights.backbone.size
    params = np.concatenate([weights.backbone, weights.head])
    state = AdamState.zeros(params.size)

    def unpack(p):
        return ModelWeights(weights.arch, p[:n_bb].copy(), p[n_bb:].copy(), dict(weights.meta))

    def full_loss(p):
        w = unpack(p)
        return smooth_l1(forecaster.forward(w, X), Y, config.delta)

    losses = [full_loss(params)]
    stalled = 0
    steps = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for i in range(0, len(order), config.minibatch):
            idx = order[i : i + config.minibatch]
            loss, g_bb, g_head = full_loss_and_grad(
                forecaster, unpack(params), X[idx], Y[idx], config.delta
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"Non-finite loss at epoch {epoch}, step {steps}"
                )
            params, state = adam_step(params, np.concatenate([g_bb, g_head]), state, config.lr)
            steps += 1
        epoch_loss = full_loss(params)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"Non-finite loss after epoch {epoch}")
        prev = losses[-1]
        losses.append(epoch_loss)
        improvement = (prev - epoch_loss) / abs(prev) if prev != 0 else 0.0
        stalled = stalled + 1 if improvement < config.min_improvement else 0
        if stalled >= config.patience:
            logger.debug("Training stalled after %d epochs", epoch + 1)
            break

    logger.debug(
        "Trained %s for %d epochs: loss %.4g -> %.4g",
        forecaster.arch,
        len(losses) - 1,
        losses[0],
        losses[-1],
    )
    return unpack(params), TrainingReport(losses, steps)
