"""
Shift-driven dynamic learning rate

A shift score is built from the z-score of the current loss against
the loss history and from how far the current embedding lies from two
buffers of past embeddings: a ring buffer of recent ones and a
reservoir sample over the whole run. The score is smoothed with an
exponential moving average and mapped through a sigmoid onto
``[alpha_min, alpha_max]``.
"""
import collections
import dataclasses
import typing

import numpy as np
from scipy.special import expit

from regime_tta.policies.config import PolicyConfig


class ReservoirBuffer:
    """
    Uniform sample of everything pushed so far

    Parameters
    ----------
    capacity: int
        Maximum number of held items.
    rng: numpy.random.Generator
        Generator deciding replacements.
    """

    def __init__(self, capacity: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.items: typing.List[np.ndarray] = []
        self.n_seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item: np.ndarray):
        self.n_seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
            return
        j = int(self.rng.integers(0, self.n_seen))
        if j < self.capacity:
            self.items[j] = item


def normalised_distance(embedding: np.ndarray, buffer: typing.Sequence[np.ndarray]) -> float:
    """
    Mean distance to a buffer relative to the buffer's own spread

    The mean Euclidean distance from ``embedding`` to the buffer
    entries, divided by the mean distance of the entries to their
    centre. Buffers with fewer than 2 entries, or with no spread, give 0.
    """
    if len(buffer) < 2:
        return 0.0
    B = np.asarray(buffer)
    spread = np.linalg.norm(B - B.mean(axis=0), axis=1).mean()
    if spread <= 0:
        return 0.0
    return float(np.linalg.norm(B - embedding, axis=1).mean() / spread)


@dataclasses.dataclass
class DynattaState:
    """
    Running state of the dynamic learning rate

    Attributes
    ----------
    rtab: collections.deque
        Most recent embeddings.
    rdb: ReservoirBuffer
        Reservoir sample of embeddings.
    losses: collections.deque
        Loss history used for the z-score.
    shift_ema: float
        Smoothed shift score.
    steps_seen: int
        Number of calls so far.
    """

    rtab: typing.Deque[np.ndarray]
    rdb: ReservoirBuffer
    losses: typing.Deque[float]
    shift_ema: float = 0.0
    steps_seen: int = 0

    @classmethod
    def fresh(cls, config: PolicyConfig, rng: np.random.Generator) -> "DynattaState":
        return cls(
            rtab=collections.deque(maxlen=config.rtab_capacity),
            rdb=ReservoirBuffer(config.rdb_capacity, rng),
            losses=collections.deque(maxlen=config.rtab_capacity),
        )

    def reset_statistics(self):
        """Drop the loss history and smoothed score, keeping the buffers"""
        self.losses.clear()
        self.shift_ema = 0.0


def loss_zscore(loss: float, history: typing.Sequence[float]) -> float:
    """Standardised loss against the history, 0 with fewer than 3 entries"""
    if len(history) < 3:
        return 0.0
    h = np.asarray(history, dtype=np.float64)
    std = h.std()
    if std <= 0:
        return 0.0
    return float((loss - h.mean()) / std)


def shift_score(loss: float, embedding: np.ndarray, state: DynattaState) -> float:
    """Equal-weight mean of the loss z-score and both buffer distances"""
    z = loss_zscore(loss, state.losses)
    d_rtab = normalised_distance(embedding, state.rtab)
    d_rdb = normalised_distance(embedding, state.rdb.items)
    return (z + d_rtab + d_rdb) / 3.0


def dynatta_lr(
    state: DynattaState,
    loss: float,
    embedding: np.ndarray,
    config: PolicyConfig,
) -> typing.Tuple[float, DynattaState]:
    """
    Learning rate of the next gradient step

    Scores the current loss and embedding against the state, updates
    the smoothed score, then pushes the loss and embedding into the
    history and buffers. During the warmup window the rate is held at
    ``dyn_alpha_min``.

    Parameters
    ----------
    state: DynattaState
        Running state, updated in place.
    loss: float
        Loss of the current minibatch.
    embedding: numpy.ndarray
        Mean backbone embedding of the current minibatch.
    config: PolicyConfig
        Policy hyperparameters.

    Returns
    -------
    tuple
        Learning rate and the updated state.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    score = shift_score(loss, embedding, state)
    state.shift_ema = (1.0 - config.dyn_eta) * state.shift_ema + config.dyn_eta * score
    if state.steps_seen < config.warmup_steps:
        alpha = config.dyn_alpha_min
    else:
        alpha = config.dyn_alpha_min + (
            config.dyn_alpha_max - config.dyn_alpha_min
        ) * float(expit(config.dyn_kappa * state.shift_ema))

    state.losses.append(float(loss))
    state.rtab.append(embedding)
    state.rdb.push(embedding)
    state.steps_seen += 1
    return alpha, state
