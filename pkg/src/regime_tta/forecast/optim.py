"""
Adaptive-moment (Adam) optimiser on flat parameter vectors
"""
import dataclasses
import typing

import numpy as np


@dataclasses.dataclass
class AdamState:
    """
    Moment estimates of an Adam optimiser

    Attributes
    ----------
    m: numpy.ndarray
        First-moment estimate.
    v: numpy.ndarray
        Second-moment estimate.
    step: int
        Number of updates applied.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kwargs)


def adam_step(
    params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float
) -> typing.Tuple[np.ndarray, AdamState]:
    """
    Apply one bias-corrected Adam update

    Parameters
    ----------
    params: numpy.ndarray
        Current parameters.
    grad: numpy.ndarray
        Gradient at ``params``.
    state: AdamState
        Optimiser state, not modified.
    lr: float
        Learning rate.

    Returns
    -------
    tuple
        Updated parameters and the new optimiser state.
    """
    if params.shape != grad.shape or grad.shape != state.m.shape:
        raise ValueError(
            f"Shape mismatch: params {params.shape}, grad {grad.shape}, "
            f"state {state.m.shape}"
        )
    if lr <= 0:
        raise ValueError(f"Learning rate must be positive, got {lr}")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, step, state.beta1, state.beta2, state.eps)
