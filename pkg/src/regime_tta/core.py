"""
Shared domain types, windowing and MinMax scaling
"""
import dataclasses
import hashlib
import typing

import numpy as np

DEFAULT_SEQ_LEN = 96
HORIZONS = (96, 192, 336, 720)
MIN_WINDOWS = 32


class InsufficientDataError(ValueError):
    """Raised when a series or dataset is too short for the requested operation"""


@dataclasses.dataclass(frozen=True)
class TimeSeriesDataset:
    """
    Univariate target series with its seasonal period

    Parameters
    ----------
    name: str
        Dataset identifier, e.g. ``ETTh1`` or ``synth_recurring``.
    values: numpy.ndarray
        Target channel values in stream order.
    frequency: str
        Sampling frequency label.
    season_length: int
        Number of samples per season.
    """

    name: str
    values: np.ndarray
    frequency: str
    season_length: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError(f"Expected a 1-d target series, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"Dataset {self.name} contains non-finite values")
        if self.season_length < 2:
            raise ValueError(f"season_length must be >= 2, got {self.season_length}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def digest(self) -> str:
        """SHA-256 of the raw target values"""
        return hashlib.sha256(self.values.tobytes()).hexdigest()


@dataclasses.dataclass(frozen=True)
class WindowPair:
    """Single (input, target) window cut from a stream"""

    input: np.ndarray
    target: np.ndarray
    origin_index: int


@dataclasses.dataclass(frozen=True)
class WindowSet:
    """
    Stacked windows of a stream segment

    Attributes
    ----------
    inputs: numpy.ndarray
        Array of shape ``(n, L)``.
    targets: numpy.ndarray
        Array of shape ``(n, H)``.
    origins: numpy.ndarray
        Origin index of each window in the stream.
    """

    inputs: np.ndarray
    targets: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def subset(self, idx: np.ndarray) -> "WindowSet":
        return WindowSet(self.inputs[idx], self.targets[idx], self.origins[idx])

    def pairs(self) -> typing.List[WindowPair]:
        return [
            WindowPair(x, y, int(o))
            for x, y, o in zip(self.inputs, self.targets, self.origins)
        ]


def make_windows(
    series: typing.Sequence[float], L: int, H: int, stride: int = 1
) -> typing.List[WindowPair]:
    """
    Cut a series into sliding (input, target) windows

    Parameters
    ----------
    series: list or numpy.ndarray
        Stream values.
    L: int
        Input length.
    H: int
        Target (forecast) length.
    stride: int, optional
        Step between window origins, default 1.

    Returns
    -------
    list[WindowPair]
        Windows for every origin ``i`` with ``i + L + H <= len(series)``.
        A series shorter than ``L + H`` gives an empty list.
    """
    return stack_windows(series, L, H, stride).pairs()


def stack_windows(
    series: typing.Sequence[float], L: int, H: int, stride: int = 1, offset: int = 0
) -> WindowSet:
    """
    Cut a series into windows stacked as arrays

    Same windows as :py:func:`make_windows`. ``offset`` is added to
    the origins so they refer to positions in the full stream.
    """
    if L < 1 or H < 1 or stride < 1:
        raise ValueError(f"L, H and stride must be positive, got {L}, {H}, {stride}")
    values = np.asarray(series, dtype=np.float64)
    n = len(values) - L - H + 1
    if n <= 0:
        return WindowSet(
            np.empty((0, L)), np.empty((0, H)), np.empty(0, dtype=np.int64)
        )
    views = np.lib.stride_tricks.sliding_window_view(values, L + H)[::stride]
    origins = np.arange(0, n, stride, dtype=np.int64) + offset
    return WindowSet(
        np.ascontiguousarray(views[:, :L]),
        np.ascontiguousarray(views[:, L:]),
        origins,
    )


@dataclasses.dataclass(frozen=True)
class ScalerState:
    """
    MinMax scaler mapping ``[data_min, data_max]`` onto ``[-1, 1]``

    A constant series (``data_max == data_min``) transforms to 0.
    """

    data_min: float = 0.0
    data_max: float = 0.0
    fitted: bool = False

    @property
    def degenerate(self) -> bool:
        return self.data_max <= self.data_min

    def transform(self, x: typing.Union[float, np.ndarray]) -> np.ndarray:
        if not self.fitted:
            raise ValueError("Scaler has not been fitted")
        x = np.asarray(x, dtype=np.float64)
        if self.degenerate:
            return np.zeros_like(x)
        return 2.0 * (x - self.data_min) / (self.data_max - self.data_min) - 1.0

    def inverse_transform(self, y: typing.Union[float, np.ndarray]) -> np.ndarray:
        if not self.fitted:
            raise ValueError("Scaler has not been fitted")
        y = np.asarray(y, dtype=np.float64)
        if self.degenerate:
            return np.full_like(y, self.data_min)
        return (y + 1.0) * 0.5 * (self.data_max - self.data_min) + self.data_min

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def fit_scaler(values: typing.Sequence[float]) -> ScalerState:
    """
    Fit a MinMax ``[-1, 1]`` scaler

    Parameters
    ----------
    values: list or numpy.ndarray
        Non-empty finite values.

    Returns
    -------
    ScalerState
        Fitted scaler state.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("Cannot fit a scaler on an empty series")
    if np.isnan(values).any():
        raise ValueError("Cannot fit a scaler on a series containing NaN")
    if not np.all(np.isfinite(values)):
        raise ValueError("Cannot fit a scaler on a series containing inf")
    return ScalerState(float(values.min()), float(values.max()), True)


@dataclasses.dataclass(frozen=True)
class HarnessConfig:
    """
    Streaming protocol settings

    Parameters
    ----------
    initial_train_size: int
        Rows used for the initial training, default 720.
    batch_size: int
        Rows per streamed batch, default 750.
    max_batches: int
        Maximum number of batches processed, default 10.
    horizons: tuple[int]
        Forecast horizons.
    seeds: tuple[int]
        Random seeds.
    seq_len: int
        Model input length ``L``, default 96.
    eval_sample: int
        Size of the fixed evaluation minibatch per batch, default 64.
    minibatch: int
        Gradient minibatch size, default 32.
    fisher_samples: int
        Windows drawn per batch for Fisher estimates, default 200.
        Policies asking for more extend the sample, each policy uses
        its first ``PolicyConfig.fisher_samples`` windows.
    plan_steps: int
        Gradient minibatches planned per batch, default 25. Policies
        needing more extend the plan.
    """

    initial_train_size: int = 720
    batch_size: int = 750
    max_batches: int = 10
    horizons: typing.Tuple[int, ...] = HORIZONS
    seeds: typing.Tuple[int, ...] = (0, 1, 2)
    seq_len: int = DEFAULT_SEQ_LEN
    eval_sample: int = 64
    minibatch: int = 32
    fisher_samples: int = 200
    plan_steps: int = 25

    def __post_init__(self):
        for name in (
            "initial_train_size",
            "batch_size",
            "max_batches",
            "seq_len",
            "eval_sample",
            "minibatch",
            "fisher_samples",
            "plan_steps",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if any(h <= 0 for h in self.horizons):
            raise ValueError("horizons must be positive")
        if self.seq_len >= self.batch_size:
            raise ValueError("seq_len must be smaller than batch_size")
        object.__setattr__(self, "horizons", tuple(self.horizons))
        object.__setattr__(self, "seeds", tuple(self.seeds))

    def min_span(self, horizon: int) -> int:
        """Rows needed to cut one full gradient minibatch of windows"""
        return self.seq_len + horizon + MIN_WINDOWS - 1


@dataclasses.dataclass(frozen=True)
class BatchPlan:
    """
    Seeded sampling plan shared by every policy for one batch

    Attributes
    ----------
    eval_idx: numpy.ndarray
        Indices of the fixed evaluation minibatch.
    step_idx: tuple[numpy.ndarray]
        Gradient minibatch indices for each step.
    fisher_idx: numpy.ndarray
        Indices of the Fisher-estimate sample in random order.
    """

    eval_idx: np.ndarray
    step_idx: typing.Tuple[np.ndarray, ...]
    fisher_idx: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha1(self.eval_idx.tobytes())
        for idx in self.step_idx:
            h.update(idx.tobytes())
        h.update(self.fisher_idx.tobytes())
        return h.hexdigest()[:16]


def make_plan(
    seed: int,
    batch_index: int,
    n_windows: int,
    n_steps: int,
    config: HarnessConfig,
    fisher_samples: typing.Optional[int] = None,
) -> BatchPlan:
    """
    Draw the sampling plan of a batch

    The plan depends only on ``(seed, batch_index, n_windows, n_steps)``
    and the Fisher sample size,
    so every policy sees the same evaluation sample and the same
    gradient-minibatch index sequence. The three samples come from
    independent child streams, so the first ``k`` step minibatches and
    the Fisher sample do not depend on ``n_steps``. The Fisher sample is
    a random ordering of windows cut to ``fisher_samples`` (default
    ``config.fisher_samples``), so any prefix of it is itself a uniform
    sample and does not depend on the requested size.
    """
    if n_windows <= 0:
        raise InsufficientDataError("Cannot plan a batch without windows")
    eval_rng, step_rng, fisher_rng = (
        np.random.default_rng(s)
        for s in np.random.SeedSequence([seed, batch_index]).spawn(3)
    )
    eval_idx = np.sort(
        eval_rng.choice(n_windows, size=min(config.eval_sample, n_windows), replace=False)
    )
    step_idx = tuple(
        step_rng.integers(0, n_windows, size=config.minibatch) for _ in range(n_steps)
    )
    fisher_samples = fisher_samples or config.fisher_samples
    fisher_idx = fisher_rng.permutation(n_windows)[: min(fisher_samples, n_windows)]
    return BatchPlan(eval_idx, step_idx, fisher_idx)


@dataclasses.dataclass(frozen=True)
class StreamBatch:
    """
    One streamed batch as delivered to a policy

    Attributes
    ----------
    index: int
        1-based batch index.
    start, end: int
        Row bounds ``[start, end)`` of the batch in the stream.
    rows: numpy.ndarray
        Raw target values of the batch.
    history: numpy.ndarray
        Raw target values of all rows up to ``end``.
    windows: WindowSet
        Raw windows of the adaptation span.
    plan: BatchPlan
        Shared sampling plan.
    scaler: ScalerState
        Scaler refit on the batch rows.
    season_length: int
        Season length of the dataset.
    """

    index: int
    start: int
    end: int
    rows: np.ndarray
    history: np.ndarray
    windows: WindowSet
    plan: BatchPlan
    scaler: ScalerState
    season_length: int

    def scaled_windows(self, scaler: ScalerState) -> WindowSet:
        return WindowSet(
            scaler.transform(self.windows.inputs),
            scaler.transform(self.windows.targets),
            self.windows.origins,
        )
