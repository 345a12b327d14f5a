"""
Regime checkpoint library

Stores adapted weights together with the regime fingerprint of the
batch they were adapted on and the scaler they expect, finds the
stored regime closest to a query batch, and decides whether its
checkpoint should replace the live model.
"""
import collections
import dataclasses
import json
import logging
import os
import pathlib
import time
import typing

import numpy as np

from regime_tta.core import ScalerState
from regime_tta.forecast.base import ModelWeights
from regime_tta.similarity import RegimeFeatures, SimilarityWeights, ensemble_similarity

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 5
DEFAULT_THRESHOLD = 0.75
DEFAULT_GATE = 0.70


class CheckpointLoadError(RuntimeError):
    """Raised when a stored checkpoint cannot be read back"""


@dataclasses.dataclass
class CheckpointEntry:
    """
    Stored checkpoint

    Attributes
    ----------
    weights: ModelWeights or None
        Weight snapshot, ``None`` when only held on disk.
    features: RegimeFeatures
        Fingerprint of the batch the weights were adapted on.
    scaler: ScalerState
        Scaler active when the checkpoint was stored.
    metadata: dict
        ``batch_index``, ``loss``, ``policy`` and ``timestamp``.
    path: pathlib.Path or None
        Weight file when the memory is backed by a directory.
    """

    weights: typing.Optional[ModelWeights]
    features: RegimeFeatures
    scaler: ScalerState
    metadata: typing.Dict[str, typing.Any]
    path: typing.Optional[pathlib.Path] = None

    def __post_init__(self):
        if np.asarray(self.features.raw_sample).size == 0:
            raise ValueError("Checkpoint features must carry a raw sample")

    def load_weights(self) -> ModelWeights:
        """
        Weights of the checkpoint, read from disk if not held in memory

        Raises
        ------
        CheckpointLoadError
            If the weight file is missing or unreadable.
        """
        if self.weights is not None:
            return self.weights.copy()
        if self.path is None:
            raise CheckpointLoadError("Checkpoint holds neither weights nor a path")
        try:
            return ModelWeights.load(self.path)
        except (OSError, ValueError, KeyError) as exc:
            raise CheckpointLoadError(f"Cannot read checkpoint {self.path}: {exc}") from exc


class RegimeMemory:
    """
    FIFO-capped library of regime checkpoints

    Examples
    --------

    .. testcode:: regime_memory

       from regime_tta.memory import RegimeMemory

       memory = RegimeMemory(capacity=5)
       assert memory.best_match(None) == (0.0, None)
    """

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        directory: typing.Optional[typing.Union[str, os.PathLike]] = None,
        weights: typing.Optional[SimilarityWeights] = None,
        keep_in_memory: bool = True,
    ):
        """
        Initialise a RegimeMemory

        Parameters
        ----------
        capacity: int
            Maximum number of entries, default 5.
        directory: str or pathlib.Path, optional
            If given, each stored checkpoint is also written there as
            ``ckpt_<seq>.npz`` with a ``ckpt_<seq>.json`` metadata sidecar.
        weights: SimilarityWeights, optional
            Similarity component weights used for matching.
        keep_in_memory: bool, optional
            If ``False`` (and a directory is given) weights are only kept
            on disk and read back when a checkpoint is evaluated.
        """
        if capacity < 1:
            raise ValueError(f"Memory capacity must be >= 1, got {capacity}")
        if not keep_in_memory and directory is None:
            raise ValueError("keep_in_memory=False needs a checkpoint directory")
        self.capacity = capacity
        self.directory = pathlib.Path(directory) if directory is not None else None
        self.weights = weights or SimilarityWeights()
        self.keep_in_memory = keep_in_memory
        self.entries: typing.Deque[CheckpointEntry] = collections.deque()
        self.n_stored = 0
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def __len__(self) -> int:
        return len(self.entries)

    def store(self, entry: CheckpointEntry) -> typing.Optional[CheckpointEntry]:
        """
        Append a checkpoint, evicting the oldest one beyond capacity

        Returns
        -------
        CheckpointEntry or None
            The evicted entry, if any.
        """
        if self.directory is not None:
            entry = self._write(entry)
        self.entries.append(entry)
        self.n_stored += 1
        if len(self.entries) > self.capacity:
            evicted = self.entries.popleft()
            logger.debug(
                "Evicted checkpoint from batch %s", evicted.metadata.get("batch_index")
            )
            return evicted
        return None

    def _write(self, entry: CheckpointEntry) -> CheckpointEntry:
        stem = self.directory / f"ckpt_{self.n_stored:04d}"
        weights_path = stem.with_suffix(".npz")
        entry.weights.save(weights_path)
        sidecar = {
            **entry.metadata,
            "arch": entry.weights.arch,
            "features": entry.features.to_dict(),
            "raw_sample": entry.features.raw_sample.tolist(),
            "scaler": entry.scaler.to_dict(),
        }
        with open(stem.with_suffix(".json"), "w") as f:
            json.dump(sidecar, f, indent=2)
        return dataclasses.replace(
            entry,
            weights=entry.weights if self.keep_in_memory else None,
            path=weights_path,
        )

    def best_match(
        self, query: typing.Optional[RegimeFeatures]
    ) -> typing.Tuple[float, typing.Optional[CheckpointEntry]]:
        """
        Stored entry most similar to a query fingerprint

        Ties go to the most recently stored entry. An empty memory
        returns ``(0.0, None)``.
        """
        best_sim, best = 0.0, None
        for entry in self.entries:
            sim = ensemble_similarity(query, entry.features, self.weights)
            if best is None or sim >= best_sim:
                best_sim, best = sim, entry
        return best_sim, best


@dataclasses.dataclass(frozen=True)
class GateDecision:
    """
    Outcome of the checkpoint gate

    Attributes
    ----------
    weights: ModelWeights
        Weights to continue with.
    scaler: ScalerState
        Scaler to continue with.
    loaded: bool
        ``True`` if the checkpoint replaced the live model.
    loss_curr: float
        Live-model loss, replaced by the checkpoint loss when loaded.
    loss_ckpt: float or None
        Checkpoint loss, ``None`` if the similarity gate failed.
    """

    weights: ModelWeights
    scaler: ScalerState
    loaded: bool
    loss_curr: float
    loss_ckpt: typing.Optional[float] = None


def gate_and_load(
    sim: float,
    entry: typing.Optional[CheckpointEntry],
    current: ModelWeights,
    scaler: ScalerState,
    loss_curr: float,
    evaluate: typing.Callable[[ModelWeights, ScalerState], float],
    threshold: float = DEFAULT_THRESHOLD,
    gate: float = DEFAULT_GATE,
) -> GateDecision:
    """
    Load a checkpoint if it is similar enough and clearly better

    The checkpoint replaces the live model only if ``sim >= threshold``
    and its loss on the evaluation minibatch, computed with its own
    scaler, is below ``gate * loss_curr``.

    Parameters
    ----------
    sim: float
        Similarity of the best-matching entry.
    entry: CheckpointEntry or None
        Best-matching entry.
    current: ModelWeights
        Live weights.
    scaler: ScalerState
        Live scaler.
    loss_curr: float
        Live-model loss on the evaluation minibatch.
    evaluate: callable
        ``evaluate(weights, scaler)`` returning the loss of a candidate
        on the same evaluation minibatch.
    threshold: float
        Similarity gate, default 0.75.
    gate: float
        Loss gate, default 0.70.
    """
    unloaded = GateDecision(current, scaler, False, loss_curr)
    if entry is None or sim < threshold:
        return unloaded
    try:
        candidate = entry.load_weights()
    except CheckpointLoadError as exc:
        logger.warning("Skipping checkpoint candidate: %s", exc)
        return unloaded
    loss_ckpt = evaluate(candidate, entry.scaler)
    if loss_ckpt < gate * loss_curr:
        logger.info(
            "Loaded checkpoint from batch %s (sim=%.3f, loss %.4g -> %.4g)",
            entry.metadata.get("batch_index"),
            sim,
            loss_curr,
            loss_ckpt,
        )
        return GateDecision(candidate, entry.scaler, True, loss_ckpt, loss_ckpt)
    return GateDecision(current, scaler, False, loss_curr, loss_ckpt)


def make_entry(
    weights: ModelWeights,
    features: RegimeFeatures,
    scaler: ScalerState,
    batch_index: int,
    loss: float,
    policy: str,
) -> CheckpointEntry:
    """Snapshot the live model as a checkpoint entry"""
    return CheckpointEntry(
        weights=weights.copy(),
        features=features,
        scaler=scaler,
        metadata={
            "batch_index": batch_index,
            "loss": float(loss),
            "policy": policy,
            "timestamp": time.time(),
        },
    )
