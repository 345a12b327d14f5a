"""
Streaming evaluation runner
"""
import dataclasses
import hashlib
import logging
import time
import typing

import numpy as np
import tqdm

from regime_tta.core import (
    HarnessConfig,
    InsufficientDataError,
    StreamBatch,
    TimeSeriesDataset,
    fit_scaler,
    make_plan,
    stack_windows,
)
from regime_tta.datagen import check_length
from regime_tta.forecast import ModelSpec, build_forecaster
from regime_tta.forecast.base import LiveModel
from regime_tta.forecast.training import TrainingConfig, TrainingDivergedError, train_full
from regime_tta.harness.metrics import Metrics, compute_metrics
from regime_tta.memory import RegimeMemory
from regime_tta.policies import AdaptationAbortedError, AdaptReport, PolicyConfig, build_policy

logger = logging.getLogger(__name__)


class StreamAbortedError(RuntimeError):
    """
    Raised when a run cannot be completed

    Attributes
    ----------
    records: list[RunRecord]
        Records of the batches completed before the abort.
    diagnostics: dict
        Details of the failure.
    """

    def __init__(
        self,
        message: str,
        records: typing.List["RunRecord"],
        diagnostics: typing.Dict[str, typing.Any],
    ):
        super().__init__(message)
        self.records = records
        self.diagnostics = diagnostics


@dataclasses.dataclass
class RunRecord:
    """
    Evaluation of one batch of one run

    Attributes
    ----------
    policy, model, dataset: str
        Run identifiers.
    horizon, seed, batch_index: int
        Run identifiers.
    batch_start, batch_end: int
        Row bounds of the batch.
    metrics: Metrics
        Forecast errors on the ``horizon`` rows after the batch.
    adapt_time_seconds: float
        Wall-clock time of the policy update.
    report: AdaptReport
        What the policy did.
    truth_digest: str
        Hash of the evaluation targets.
    plan_digest: str
        Hash of the batch sampling plan.
    """

    policy: str
    model: str
    dataset: str
    horizon: int
    seed: int
    batch_index: int
    batch_start: int
    batch_end: int
    metrics: Metrics
    adapt_time_seconds: float
    report: AdaptReport
    truth_digest: str
    plan_digest: str

    def to_dict(self, include_lr: bool = True) -> dict:
        """
        Flat record for logs and tables

        Parameters
        ----------
        include_lr: bool, optional
            If ``True`` the per-step learning rates are included as a
            list; the mean learning rate is always included.
        """
        report = self.report.to_dict()
        lr_used = report.pop("lr_used")
        for key in ("policy", "batch_index"):
            report.pop(key)
        d = {
            "policy": self.policy,
            "model": self.model,
            "dataset": self.dataset,
            "horizon": self.horizon,
            "seed": self.seed,
            "batch_index": self.batch_index,
            "batch_start": self.batch_start,
            "batch_end": self.batch_end,
            **self.metrics.to_dict(),
            "adapt_time_seconds": self.adapt_time_seconds,
            **report,
            "mean_lr": self.report.mean_lr,
            "truth_digest": self.truth_digest,
            "plan_digest": self.plan_digest,
        }
        if include_lr:
            d["lr_used"] = lr_used
        return d


def initial_span(config: HarnessConfig, horizon: int) -> int:
    """Rows used for initial training"""
    return max(config.initial_train_size, config.min_span(horizon))


def pretrain(
    dataset: TimeSeriesDataset,
    spec: ModelSpec,
    horizon: int,
    seed: int,
    config: typing.Optional[HarnessConfig] = None,
    training: typing.Optional[TrainingConfig] = None,
) -> LiveModel:
    """
    Train a forecaster on the head of the stream

    The result depends only on its arguments, so one pretrained model
    can be shared by every policy evaluated on the same run settings.

    Parameters
    ----------
    dataset: TimeSeriesDataset
        Stream.
    spec: ModelSpec
        Architecture.
    horizon: int
        Forecast horizon.
    seed: int
        Random seed for weight initialisation and shuffling.
    config: HarnessConfig, optional
        Protocol settings.
    training: TrainingConfig, optional
        Training budget.

    Returns
    -------
    LiveModel
        Trained model with the scaler fit on the training rows.
    """
    config = config or HarnessConfig()
    training = training or TrainingConfig()
    n_init = initial_span(config, horizon)
    if len(dataset) < n_init:
        raise InsufficientDataError(
            f"Dataset {dataset.name} has {len(dataset)} rows, initial training needs {n_init}"
        )
    rows = dataset.values[:n_init]
    scaler = fit_scaler(rows)
    windows = stack_windows(scaler.transform(rows), spec.seq_len, horizon)
    forecaster = build_forecaster(spec, horizon)
    rng = np.random.default_rng(seed)
    weights, report = train_full(
        forecaster, forecaster.init_weights(rng), windows, training, rng
    )
    logger.info(
        "Pretrained %s on %s (H=%d, seed=%d): %d epochs, loss %.4g",
        spec.arch,
        dataset.name,
        horizon,
        seed,
        report.epochs_run,
        report.epoch_losses[-1],
    )
    return LiveModel(forecaster, weights, scaler)


def pretrain_or_abort(
    dataset: TimeSeriesDataset,
    spec: ModelSpec,
    horizon: int,
    seed: int,
    config: typing.Optional[HarnessConfig] = None,
    training: typing.Optional[TrainingConfig] = None,
) -> LiveModel:
    """
    :py:func:`pretrain`, reporting failures as an aborted run

    Raises
    ------
    StreamAbortedError
        If initial training diverges or lacks data. No batch has been
        evaluated, so the error carries no records.
    """
    try:
        return pretrain(dataset, spec, horizon, seed, config, training)
    except (TrainingDivergedError, InsufficientDataError) as exc:
        logger.error(
            "Initial training failed for %s/%s (H=%d, seed=%d): %s",
            spec.arch,
            dataset.name,
            horizon,
            seed,
            exc,
        )
        raise StreamAbortedError(
            str(exc),
            [],
            {
                "stage": "pretrain",
                "batch_index": 0,
                "cause": type(exc).__name__,
                "message": str(exc),
            },
        ) from exc


def iter_batches(
    dataset: TimeSeriesDataset,
    config: HarnessConfig,
    horizon: int,
    seed: int,
    n_steps: typing.Optional[int] = None,
    fisher_samples: typing.Optional[int] = None,
) -> typing.Iterator[StreamBatch]:
    """
    Stream of batches shared by every policy

    Batch ``t`` covers rows
    ``[initial_train_size + (t - 1) * batch_size, ... + batch_size)``.
    The adaptation windows are cut from the batch rows, reaching back
    into earlier rows when the batch alone holds fewer than a minibatch
    of windows. The stream ends at the first batch without ``horizon``
    rows after it.

    Parameters
    ----------
    dataset: TimeSeriesDataset
        Stream.
    config: HarnessConfig
        Protocol settings.
    horizon: int
        Forecast horizon.
    seed: int
        Seed of the per-batch sampling plans.
    n_steps: int, optional
        Gradient minibatches to plan, default ``config.plan_steps``.
    fisher_samples: int, optional
        Size of the Fisher sample, default ``config.fisher_samples``.
    """
    values = dataset.values
    L = config.seq_len
    n_steps = n_steps or config.plan_steps
    for t in range(1, config.max_batches + 1):
        start = config.initial_train_size + (t - 1) * config.batch_size
        end = start + config.batch_size
        if end + horizon > len(values):
            if end <= len(values):
                logger.warning(
                    "Skipping batch %d of %s: fewer than %d rows of lookahead",
                    t,
                    dataset.name,
                    horizon,
                )
            return
        span_start = max(0, min(start, end - config.min_span(horizon)))
        windows = stack_windows(values[span_start:end], L, horizon, offset=span_start)
        rows = values[start:end]
        yield StreamBatch(
            index=t,
            start=start,
            end=end,
            rows=rows,
            history=values[:end],
            windows=windows,
            plan=make_plan(seed, t, len(windows), n_steps, config, fisher_samples),
            scaler=fit_scaler(rows),
            season_length=dataset.season_length,
        )


def n_batches(dataset: TimeSeriesDataset, config: HarnessConfig, horizon: int) -> int:
    """Number of batches :py:func:`iter_batches` yields"""
    room = len(dataset) - horizon - config.initial_train_size
    return max(0, min(config.max_batches, room // config.batch_size))


def truth_digest(truth: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(truth, dtype=np.float64).tobytes()).hexdigest()[:16]


def run_stream(
    dataset: TimeSeriesDataset,
    spec: ModelSpec,
    policy_config: PolicyConfig,
    horizon: int,
    seed: int,
    config: typing.Optional[HarnessConfig] = None,
    model: typing.Optional[LiveModel] = None,
    memory: typing.Optional[RegimeMemory] = None,
    training: typing.Optional[TrainingConfig] = None,
    show_progress: bool = False,
) -> typing.List[RunRecord]:
    """
    Run one policy over the batch stream

    Trains (or takes) the initial model, then for every batch adapts
    with the policy, forecasts the ``horizon`` rows following the batch
    from its last ``seq_len`` rows and scores the forecast in the
    original scale.

    Examples
    --------

    .. testcode:: run_stream

       from regime_tta.core import HarnessConfig
       from regime_tta.datagen import ScenarioSpec, generate
       from regime_tta.forecast import ModelSpec
       from regime_tta.harness import run_stream
       from regime_tta.policies import PolicyConfig

       dataset = generate(ScenarioSpec("recurring", length=2400))
       records = run_stream(
           dataset,
           ModelSpec("dlinear"),
           PolicyConfig(kind="rgtta"),
           horizon=96,
           seed=0,
           config=HarnessConfig(max_batches=2),
       )

    Parameters
    ----------
    dataset: TimeSeriesDataset
        Stream.
    spec: ModelSpec
        Architecture.
    policy_config: PolicyConfig
        Policy and hyperparameters.
    horizon: int
        Forecast horizon.
    seed: int
        Random seed.
    config: HarnessConfig, optional
        Protocol settings.
    model: LiveModel, optional
        Pretrained model from :py:func:`pretrain` with the same
        arguments; trained here if omitted. It is not modified.
    memory: RegimeMemory, optional
        Checkpoint library for regime-guided policies.
    training: TrainingConfig, optional
        Initial-training budget, also used by the retrain policy.
    show_progress: bool, optional
        If ``True`` a progress bar over batches is displayed.

    Returns
    -------
    list[RunRecord]
        One record per evaluated batch.

    Raises
    ------
    StreamAbortedError
        If initial training fails or the policy aborts, carrying the
        records completed so far.
    """
    config = config or HarnessConfig()
    check_length(dataset, config.initial_train_size, config.batch_size)
    if model is None:
        model = pretrain_or_abort(dataset, spec, horizon, seed, config, training)
    else:
        assert model.forecaster.horizon == horizon, "Pretrained model has a different horizon"
        model = LiveModel(model.forecaster, model.weights.copy(), model.scaler)

    policy = build_policy(policy_config, seed, memory, training)
    n_steps = max(config.plan_steps, policy_config.max_steps)
    fisher_samples = max(config.fisher_samples, policy_config.fisher_samples)
    values = dataset.values
    L = config.seq_len

    records: typing.List[RunRecord] = []
    it = tqdm.tqdm(
        iter_batches(dataset, config, horizon, seed, n_steps, fisher_samples),
        total=n_batches(dataset, config, horizon),
        desc=f"{policy.name}/{spec.arch}/{dataset.name}/H{horizon}/s{seed}",
        disable=not show_progress,
    )
    for batch in it:
        t0 = time.perf_counter()
        try:
            model, report = policy.adapt_batch(model, batch)
        except AdaptationAbortedError as exc:
            logger.error("Run aborted: %s", exc)
            raise StreamAbortedError(
                str(exc), records, {"stage": "adapt", **exc.diagnostics}
            ) from exc
        elapsed = time.perf_counter() - t0

        truth = values[batch.end : batch.end + horizon]
        pred = model.predict(values[batch.end - L : batch.end])
        records.append(
            RunRecord(
                policy=policy.name,
                model=spec.arch,
                dataset=dataset.name,
                horizon=horizon,
                seed=seed,
                batch_index=batch.index,
                batch_start=batch.start,
                batch_end=batch.end,
                metrics=compute_metrics(pred, truth, values[batch.end - 1]),
                adapt_time_seconds=elapsed,
                report=report,
                truth_digest=truth_digest(truth),
                plan_digest=batch.plan.digest(),
            )
        )

    logger.info(
        "Finished %s/%s/%s H=%d seed=%d: %d batches",
        policy.name,
        spec.arch,
        dataset.name,
        horizon,
        seed,
        len(records),
    )
    return records
