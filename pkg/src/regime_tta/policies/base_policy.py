"""
Base update policy pattern
"""
import dataclasses
import typing

from regime_tta.core import StreamBatch
from regime_tta.forecast.base import LiveModel
from regime_tta.policies.config import PolicyConfig


class AdaptationAbortedError(RuntimeError):
    """
    Raised when adaptation produces a non-finite loss

    Attributes
    ----------
    diagnostics: dict
        Policy, batch, step and loss values at the point of failure.
    """

    def __init__(self, message: str, diagnostics: typing.Dict[str, typing.Any]):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclasses.dataclass
class AdaptReport:
    """
    What a policy did with one batch

    Attributes
    ----------
    policy: str
        Policy identifier.
    batch_index: int
        Index of the adapted batch.
    steps_used: int
        Gradient steps taken.
    lr_used: list[float]
        Learning rate of each step.
    loaded_checkpoint: bool
        ``True`` if a stored checkpoint replaced the live model.
    similarity: float, optional
        Best-match similarity, ``None`` for policies without memory.
    loss_before: float
        Evaluation-minibatch loss of the live model before any change.
    loss_after: float
        Evaluation-minibatch loss after adaptation.
    loss_ckpt: float, optional
        Evaluation-minibatch loss of the gate-evaluated checkpoint.
    early_stopped: bool
        ``True`` if loss-driven early stopping ended adaptation.
    evicted: bool
        ``True`` if storing this batch's checkpoint evicted another.
    evicted_batch: int, optional
        Batch index of the evicted checkpoint.
    memory_size: int
        Checkpoints held after storing.
    """

    policy: str
    batch_index: int
    steps_used: int
    lr_used: typing.List[float]
    loaded_checkpoint: bool = False
    similarity: typing.Optional[float] = None
    loss_before: float = float("nan")
    loss_after: float = float("nan")
    loss_ckpt: typing.Optional[float] = None
    early_stopped: bool = False
    evicted: bool = False
    evicted_batch: typing.Optional[int] = None
    memory_size: int = 0

    @property
    def mean_lr(self) -> float:
        return sum(self.lr_used) / len(self.lr_used) if self.lr_used else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class BasePolicy:
    """
    Base update policy

    A policy owns all state it carries between batches (checkpoint
    memory, Fisher estimates, learning-rate statistics) and is used by
    a single run only.
    """

    config: PolicyConfig

    @property
    def name(self) -> str:
        return self.config.kind.value

    def adapt_batch(
        self, model: LiveModel, batch: StreamBatch
    ) -> typing.Tuple[LiveModel, AdaptReport]:
        """
        Update the live model on a newly arrived batch

        Called once per batch of the stream, after the batch rows are
        known and before the forecast from the end of the batch is
        issued.

        Parameters
        ----------
        model: LiveModel
            Current forecaster, weights and scaler.
        batch: StreamBatch
            Batch rows, windows and the shared sampling plan.

        Returns
        -------
        tuple
            Updated live model and an :py:class:`AdaptReport`.
        """
        raise NotImplementedError
