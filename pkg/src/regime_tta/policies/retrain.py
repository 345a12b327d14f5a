"""
Full retrain reference policy
"""
import logging
import typing

import numpy as np

from regime_tta.core import InsufficientDataError, StreamBatch, fit_scaler, stack_windows
from regime_tta.forecast.base import LiveModel
from regime_tta.forecast.losses import smooth_l1
from regime_tta.forecast.training import TrainingConfig, TrainingDivergedError, train_full
from regime_tta.policies.base_policy import AdaptationAbortedError, AdaptReport, BasePolicy
from regime_tta.policies.config import PolicyConfig, PolicyKind

logger = logging.getLogger(__name__)


class RetrainPolicy(BasePolicy):
    """
    Retrain from scratch on every row seen so far

    Each batch discards the live weights, refits the scaler on the
    whole history and trains a fresh model with the initial-training
    budget. Only the decomposition-linear forecaster is supported.
    """

    def __init__(
        self,
        config: PolicyConfig,
        seed: int = 0,
        training: typing.Optional[TrainingConfig] = None,
    ):
        if config.kind is not PolicyKind.RETRAIN:
            raise ValueError(f"RetrainPolicy needs kind 'retrain', got {config.kind.value!r}")
        self.config = config
        self.seed = seed
        self.training = training or TrainingConfig()

    def adapt_batch(
        self, model: LiveModel, batch: StreamBatch
    ) -> typing.Tuple[LiveModel, AdaptReport]:
        forecaster = model.forecaster
        if forecaster.arch != "dlinear":
            raise ValueError(f"Retrain policy supports dlinear only, got {forecaster.arch}")
        scaler = fit_scaler(batch.history)
        windows = stack_windows(
            scaler.transform(batch.history), forecaster.seq_len, forecaster.horizon
        )
        if len(windows) == 0:
            raise InsufficientDataError(
                f"History of {len(batch.history)} rows is too short to retrain"
            )
        rng = np.random.default_rng([self.seed, batch.index])
        try:
            weights, training = train_full(
                forecaster, forecaster.init_weights(rng), windows, self.training, rng
            )
        except TrainingDivergedError as exc:
            raise AdaptationAbortedError(
                f"Retraining diverged at batch {batch.index}: {exc}",
                {
                    "policy": self.name,
                    "batch_index": batch.index,
                    "where": "retrain",
                    "cause": type(exc).__name__,
                    "message": str(exc),
                },
            ) from exc

        report = AdaptReport(
            policy=self.name,
            batch_index=batch.index,
            steps_used=training.steps,
            lr_used=[self.training.lr],
            loss_before=self._eval_loss(model, batch),
            loss_after=self._eval_loss(LiveModel(forecaster, weights, scaler), batch),
        )
        logger.debug(
            "retrain batch %d: %d epochs on %d windows",
            batch.index,
            training.epochs_run,
            len(windows),
        )
        return LiveModel(forecaster, weights, scaler), report

    def _eval_loss(self, model: LiveModel, batch: StreamBatch) -> float:
        windows = batch.scaled_windows(model.scaler).subset(batch.plan.eval_idx)
        pred = model.forecaster.forward(model.weights, windows.inputs)
        return smooth_l1(pred, windows.targets, self.config.loss_delta)
