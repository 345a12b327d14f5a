"""
Head-only test-time adaptation with optional regime guidance

One loop serves every adaptive policy. Regime-guided policies first
fingerprint the batch, look up the closest stored regime and possibly
load its checkpoint, then adapt with a similarity-scaled learning rate
and loss-driven early stopping, and finally store the adapted weights.
Baselines skip the memory and run a fixed number of steps. EWC
variants add the consolidation penalty to every step, and DynaTTA
variants draw each step's learning rate from the shift score.
"""
import logging
import typing

import numpy as np

from regime_tta.core import ScalerState, StreamBatch
from regime_tta.forecast.base import LiveModel, ModelWeights
from regime_tta.forecast.optim import AdamState, adam_step
from regime_tta.forecast.training import head_fisher, head_loss, head_loss_and_grad
from regime_tta.memory import RegimeMemory, gate_and_load, make_entry
from regime_tta.policies.base_policy import AdaptationAbortedError, AdaptReport, BasePolicy
from regime_tta.policies.config import PolicyConfig, PolicyKind
from regime_tta.policies.dynatta import DynattaState, dynatta_lr
from regime_tta.policies.ewc import EwcState, ewc_loss, ewc_penalty_grad, fisher_update
from regime_tta.policies.schedules import early_stop_check, rg_lr
from regime_tta.similarity import SimilarityWeights, extract_features

logger = logging.getLogger(__name__)


class AdaptivePolicy(BasePolicy):
    """
    Gradient-based update policy on the forecaster head

    Examples
    --------

    .. testcode:: adaptive_policy

       from regime_tta.policies import AdaptivePolicy, PolicyConfig

       policy = AdaptivePolicy(PolicyConfig(kind="rgtta"), seed=0)
       assert len(policy.memory) == 0
    """

    def __init__(
        self,
        config: PolicyConfig,
        seed: int = 0,
        memory: typing.Optional[RegimeMemory] = None,
    ):
        """
        Initialise an AdaptivePolicy

        Parameters
        ----------
        config: PolicyConfig
            Policy kind and hyperparameters.
        seed: int
            Seed of the DynaTTA reservoir buffer.
        memory: RegimeMemory, optional
            Checkpoint library of regime-guided policies. Defaults to an
            in-memory library of ``config.memory_capacity`` entries.
        """
        if config.kind is PolicyKind.RETRAIN:
            raise ValueError("AdaptivePolicy does not implement the retrain policy")
        self.config = config
        self.memory = None
        if config.kind.regime_guided:
            self.memory = memory or RegimeMemory(
                config.memory_capacity,
                weights=SimilarityWeights.preset(config.similarity),
            )
        self.ewc_state: typing.Optional[EwcState] = None
        self.dynatta_state: typing.Optional[DynattaState] = None
        if config.kind.uses_dynatta:
            self.dynatta_state = DynattaState.fresh(config, np.random.default_rng(seed))

    def _evaluator(self, forecaster, batch: StreamBatch):
        eval_idx = batch.plan.eval_idx
        delta = self.config.loss_delta

        def evaluate(weights: ModelWeights, scaler: ScalerState) -> float:
            windows = batch.scaled_windows(scaler).subset(eval_idx)
            Z = forecaster.embed(weights, windows.inputs)
            return head_loss(forecaster, weights.head, Z, windows.targets, delta)

        return evaluate

    def adapt_batch(
        self, model: LiveModel, batch: StreamBatch
    ) -> typing.Tuple[LiveModel, AdaptReport]:
        cfg = self.config
        kind = cfg.kind
        forecaster = model.forecaster
        weights = model.weights
        scaler = batch.scaler
        backbone_in = weights.backbone
        evaluate = self._evaluator(forecaster, batch)

        if kind.uses_ewc and self.ewc_state is None:
            self.ewc_state = EwcState.fresh(weights.head)

        loss_before = evaluate(weights, scaler)
        self._check_finite(loss_before, batch, 0, "evaluation")
        report = AdaptReport(
            policy=kind.value,
            batch_index=batch.index,
            steps_used=0,
            lr_used=[],
            loss_before=loss_before,
        )

        features = None
        loss_start = loss_before
        lr = cfg.alpha_base
        if kind.regime_guided:
            features = extract_features(batch.rows, batch.season_length)
            sim, entry = self.memory.best_match(features)
            decision = gate_and_load(
                sim,
                entry,
                weights,
                scaler,
                loss_before,
                evaluate,
                threshold=cfg.tau,
                gate=cfg.gate,
            )
            weights, scaler = decision.weights, decision.scaler
            loss_start = decision.loss_curr
            report.similarity = sim
            report.loaded_checkpoint = decision.loaded
            report.loss_ckpt = decision.loss_ckpt
            if decision.loaded:
                if self.ewc_state is not None:
                    self.ewc_state = self.ewc_state.reset_anchor(weights.head)
                if self.dynatta_state is not None:
                    self.dynatta_state.reset_statistics()
            lr = rg_lr(cfg.alpha_base, cfg.gamma, sim)

        windows = batch.scaled_windows(scaler)
        # Backbone is frozen, so features are computed once per batch
        Z_all = forecaster.embed(weights, windows.inputs)
        Y_all = windows.targets
        eval_idx = batch.plan.eval_idx
        Z_eval, Y_eval = Z_all[eval_idx], Y_all[eval_idx]

        n_steps = cfg.max_steps
        if n_steps > len(batch.plan.step_idx):
            raise ValueError(
                f"Batch plan holds {len(batch.plan.step_idx)} steps, policy needs {n_steps}"
            )
        use_early_stopping = kind.regime_guided and cfg.early_stopping

        head = weights.head
        adam = AdamState.zeros(head.size)
        history = [loss_start]
        for k in range(n_steps):
            idx = batch.plan.step_idx[k]
            Z, Y = Z_all[idx], Y_all[idx]
            loss, grad = head_loss_and_grad(forecaster, head, Z, Y, cfg.loss_delta)
            if self.ewc_state is not None:
                loss = ewc_loss(loss, head, self.ewc_state, cfg.ewc_lambda)
                grad = grad + ewc_penalty_grad(head, self.ewc_state, cfg.ewc_lambda)
            self._check_finite(loss, batch, k + 1, "minibatch")
            if self.dynatta_state is not None:
                lr, self.dynatta_state = dynatta_lr(
                    self.dynatta_state, loss, Z.mean(axis=0), cfg
                )
            head, adam = adam_step(head, grad, adam, lr)
            report.lr_used.append(lr)

            eval_loss = head_loss(forecaster, head, Z_eval, Y_eval, cfg.loss_delta)
            self._check_finite(eval_loss, batch, k + 1, "evaluation")
            history.append(eval_loss)
            if (
                use_early_stopping
                and k + 1 < n_steps
                and early_stop_check(history, cfg.k_min, cfg.patience, cfg.eps_improve)
            ):
                report.early_stopped = True
                break

        weights = weights.with_head(head)
        report.steps_used = len(report.lr_used)
        report.loss_after = history[-1]
        assert np.array_equal(weights.backbone, backbone_in), (
            "Backbone parameters changed during adaptation"
        )

        if self.ewc_state is not None:
            fisher_idx = batch.plan.fisher_idx[: cfg.fisher_samples]
            fisher_new = head_fisher(
                forecaster, head, Z_all[fisher_idx], Y_all[fisher_idx], cfg.loss_delta
            )
            self.ewc_state = fisher_update(
                self.ewc_state, fisher_new, head, cfg.fisher_clamp, cfg.fisher_decay
            )

        if self.memory is not None:
            evicted = self.memory.store(
                make_entry(weights, features, scaler, batch.index, report.loss_after, kind.value)
            )
            report.evicted = evicted is not None
            if evicted is not None:
                report.evicted_batch = evicted.metadata.get("batch_index")
            report.memory_size = len(self.memory)

        logger.debug(
            "%s batch %d: %d steps, loss %.4g -> %.4g, loaded=%s",
            kind.value,
            batch.index,
            report.steps_used,
            report.loss_before,
            report.loss_after,
            report.loaded_checkpoint,
        )
        return LiveModel(forecaster, weights, scaler), report

    def _check_finite(self, loss: float, batch: StreamBatch, step: int, where: str):
        if not np.isfinite(loss):
            raise AdaptationAbortedError(
                f"Non-finite {where} loss for {self.name} at batch {batch.index}, step {step}",
                {
                    "policy": self.name,
                    "batch_index": batch.index,
                    "step": step,
                    "where": where,
                    "loss": float(loss),
                },
            )
