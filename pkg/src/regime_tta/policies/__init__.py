"""
Update policy implementations
"""
import typing

from regime_tta.forecast.training import TrainingConfig
from regime_tta.memory import RegimeMemory

from .adaptive import AdaptivePolicy
from .base_policy import AdaptationAbortedError, AdaptReport, BasePolicy
from .config import ADAPTIVE_POLICIES, FIXED_STEPS, POLICY_NAMES, PolicyConfig, PolicyKind
from .dynatta import DynattaState, ReservoirBuffer, dynatta_lr, normalised_distance
from .ewc import (
    EwcState,
    blend_fisher,
    clamp_fisher,
    ewc_loss,
    ewc_penalty,
    ewc_penalty_grad,
    fisher_update,
)
from .retrain import RetrainPolicy
from .schedules import early_stop_check, relative_improvement, rg_lr


def build_policy(
    config: PolicyConfig,
    seed: int = 0,
    memory: typing.Optional[RegimeMemory] = None,
    training: typing.Optional[TrainingConfig] = None,
) -> BasePolicy:
    """
    Instantiate the policy named by a config

    Parameters
    ----------
    config: PolicyConfig
        Policy kind and hyperparameters.
    seed: int
        Run seed.
    memory: RegimeMemory, optional
        Checkpoint library for regime-guided policies.
    training: TrainingConfig, optional
        Training budget of the retrain policy.
    """
    if config.kind is PolicyKind.RETRAIN:
        return RetrainPolicy(config, seed, training)
    return AdaptivePolicy(config, seed, memory)
