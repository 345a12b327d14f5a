"""
Elastic weight consolidation on the forecaster head
"""
import dataclasses
import typing

import numpy as np


@dataclasses.dataclass
class EwcState:
    """
    Diagonal Fisher information and anchor parameters

    Attributes
    ----------
    fisher: numpy.ndarray
        Non-negative per-parameter importance, same length as the head.
    anchor: numpy.ndarray
        Head parameters the penalty pulls towards.
    initialised: bool
        ``False`` until the first Fisher estimate has been blended in.
    """

    fisher: np.ndarray
    anchor: np.ndarray
    initialised: bool = False

    def __post_init__(self):
        if self.fisher.shape != self.anchor.shape:
            raise ValueError(
                f"Fisher shape {self.fisher.shape} does not match anchor {self.anchor.shape}"
            )

    @classmethod
    def fresh(cls, head: np.ndarray) -> "EwcState":
        """Zero Fisher anchored at ``head``"""
        return cls(np.zeros_like(head), head.copy())

    def reset_anchor(self, head: np.ndarray) -> "EwcState":
        return dataclasses.replace(self, anchor=head.copy())


def ewc_penalty(head: np.ndarray, state: EwcState, lam: float) -> float:
    """``(lam / 2) * sum(F * (head - anchor) ** 2)``"""
    diff = head - state.anchor
    return 0.5 * lam * float(np.dot(state.fisher, diff * diff))


def ewc_penalty_grad(head: np.ndarray, state: EwcState, lam: float) -> np.ndarray:
    """Gradient of :py:func:`ewc_penalty` with respect to the head"""
    return lam * state.fisher * (head - state.anchor)


def ewc_loss(task_loss: float, head: np.ndarray, state: EwcState, lam: float) -> float:
    """
    Task loss plus the EWC penalty

    Parameters
    ----------
    task_loss: float
        Unregularised loss.
    head: numpy.ndarray
        Current head parameters.
    state: EwcState
        Fisher and anchor.
    lam: float
        Penalty strength.
    """
    if head.shape != state.anchor.shape:
        raise ValueError("Head and EWC anchor shapes differ")
    return task_loss + ewc_penalty(head, state, lam)


def clamp_fisher(fisher: np.ndarray, upper: float = 1e4) -> np.ndarray:
    return np.clip(fisher, 0.0, upper)


def blend_fisher(previous: np.ndarray, new: np.ndarray, decay: float = 0.5) -> np.ndarray:
    """``decay * previous + (1 - decay) * new``"""
    return decay * previous + (1.0 - decay) * new


def fisher_update(
    state: EwcState,
    fisher_new: np.ndarray,
    head: np.ndarray,
    clamp: float = 1e4,
    decay: float = 0.5,
) -> EwcState:
    """
    Fold a new Fisher estimate into the state and re-anchor

    The estimate is clamped to ``[0, clamp]`` and blended with the
    previous Fisher. The first estimate of a run is taken as is. The
    anchor moves to ``head``.

    Parameters
    ----------
    state: EwcState
        Current state.
    fisher_new: numpy.ndarray
        Mean squared per-window head gradient on the Fisher sample.
    head: numpy.ndarray
        Head parameters after adapting on the batch.
    clamp: float
        Upper clamp of Fisher entries.
    decay: float
        Weight of the previous Fisher.

    Returns
    -------
    EwcState
        Updated state.
    """
    fisher_new = clamp_fisher(np.asarray(fisher_new, dtype=np.float64), clamp)
    if fisher_new.shape != state.fisher.shape:
        raise ValueError("Fisher estimate does not match the head size")
    if state.initialised:
        fisher = blend_fisher(state.fisher, fisher_new, decay)
    else:
        fisher = fisher_new
    return EwcState(fisher, head.copy(), True)


def fisher_from_gradients(gradients: typing.Sequence[np.ndarray]) -> np.ndarray:
    """Mean of squared per-sample gradients"""
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim != 2 or len(g) == 0:
        raise ValueError("Expected a non-empty (n, p) array of gradients")
    return np.mean(g**2, axis=0)
