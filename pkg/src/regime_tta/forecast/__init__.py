"""
Compact forecasters with a frozen backbone and a trainable head
"""
from regime_tta.forecast.base import BaseForecaster, LiveModel, ModelSpec, ModelWeights
from regime_tta.forecast.dlinear import DLinear
from regime_tta.forecast.gru import GRUSmall
from regime_tta.forecast.losses import smooth_l1
from regime_tta.forecast.optim import AdamState, adam_step
from regime_tta.forecast.training import (
    TrainingConfig,
    TrainingDivergedError,
    TrainingReport,
    full_loss_and_grad,
    head_gradient,
    train_full,
)

ARCHITECTURES = ("gru_small", "dlinear")


def build_forecaster(spec: ModelSpec, horizon: int) -> BaseForecaster:
    """
    Instantiate the forecaster named by a model spec

    Parameters
    ----------
    spec: ModelSpec
        Architecture choice.
    horizon: int
        Forecast horizon ``H``.
    """
    if spec.arch == "dlinear":
        return DLinear(spec.seq_len, horizon)
    if spec.arch == "gru_small":
        return GRUSmall(spec.seq_len, horizon, spec.hidden)
    raise ValueError(f"Unknown architecture {spec.arch!r}, expected one of {ARCHITECTURES}")
