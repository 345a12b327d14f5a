"""
Synthetic regime scenarios and CSV dataset loading

Every synthetic series is a regime level plus a seasonal sine of the
regime amplitude plus AR(1) noise scaled by the regime noise factor::

    x[t] = level[t] + amplitude[t] * sin(2 pi t / season) + e[t]
    e[t] = ar_coef * e[t - 1] + noise_std * noise_scale[t] * N(0, 1)

The scenario decides how the level, amplitude and noise scale evolve.
Piecewise-constant regimes come from a schedule of
``(start, RegimeParams)`` pairs, on top of which some scenarios add a
continuous component (a trend, a drift, a shock or a volatility cycle).
"""
import dataclasses
import enum
import logging
import os
import pathlib
import typing

import numpy as np
import pandas as pd
from scipy import signal

from regime_tta.core import InsufficientDataError, TimeSeriesDataset

logger = logging.getLogger(__name__)

SYNTH_PREFIX = "synth_"
SYNTH_SEASON_LENGTH = 50
MIN_SCENARIO_LENGTH = 720 + 750

# Season length and frequency label by dataset name prefix
DATASET_TABLE = {
    "etth": (24, "hourly"),
    "ettm": (96, "15min"),
    "weather": (144, "10min"),
    "exchange": (5, "daily"),
    "synth": (SYNTH_SEASON_LENGTH, "synthetic"),
}

TREND_SLOPE = 0.004
DRIFT_TOTAL = 15.0
FAST_SWITCH_SEASONS = 2
RECURRING_SEGMENT = 500
VOLATILITY_RANGE = (0.5, 3.0)
VOLATILITY_PERIOD = 2000
SHOCK_POSITION = 0.6
SHOCK_SIZE = 8.0
SHOCK_DECAY = 200.0
MULTI_REGIME_SEGMENT = 1000


class ScenarioKind(str, enum.Enum):
    """Synthetic regime scenarios"""

    STABLE = "stable"
    TREND_BREAK = "trend_break"
    SLOW_DRIFT = "slow_drift"
    FAST_SWITCH = "fast_switch"
    RECURRING = "recurring"
    VOLATILITY = "volatility"
    SHOCK_RECOVERY = "shock_recovery"
    MULTI_REGIME = "multi_regime"

    @property
    def dataset_name(self) -> str:
        return SYNTH_PREFIX + self.value


SCENARIO_NAMES = tuple(k.dataset_name for k in ScenarioKind)


@dataclasses.dataclass(frozen=True)
class RegimeParams:
    """
    Parameters of one regime

    Parameters
    ----------
    level: float
        Additive level.
    amplitude: float
        Amplitude of the seasonal sine.
    noise_scale: float
        Multiplier of the scenario noise level.
    """

    level: float = 0.0
    amplitude: float = 5.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.amplitude < 0 or self.noise_scale <= 0:
            raise ValueError("Regime amplitude must be >= 0 and noise_scale > 0")


Schedule = typing.Tuple[typing.Tuple[int, RegimeParams], ...]

FAST_SWITCH_REGIMES = (RegimeParams(0.0, 5.0, 1.0), RegimeParams(4.0, 3.0, 1.5))
RECURRING_REGIMES = (
    RegimeParams(0.0, 5.0, 1.0),
    RegimeParams(8.0, 2.0, 0.5),
    RegimeParams(-6.0, 8.0, 2.0),
)
MULTI_REGIMES = (
    RegimeParams(0.0, 5.0, 1.0),
    RegimeParams(6.0, 3.0, 1.5),
    RegimeParams(-4.0, 7.0, 0.7),
    RegimeParams(10.0, 2.0, 2.5),
)


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """
    Synthetic scenario definition

    Parameters
    ----------
    kind: ScenarioKind
        Scenario shape.
    length: int
        Number of samples, default 10,000.
    season_length: int
        Samples per season, default 50.
    noise_std: float
        Innovation standard deviation of the AR(1) noise, default 1.
    seed: int
        Random seed.
    ar_coef: float
        AR(1) coefficient, default 0.7.
    amplitude: float
        Seasonal amplitude of single-regime scenarios, default 5.
    schedule: tuple, optional
        ``(start, RegimeParams)`` pairs replacing the scenario's own
        regime schedule. The first start must be 0.
    """

    kind: ScenarioKind
    length: int = 10_000
    season_length: int = SYNTH_SEASON_LENGTH
    noise_std: float = 1.0
    seed: int = 0
    ar_coef: float = 0.7
    amplitude: float = 5.0
    schedule: typing.Optional[Schedule] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.length < MIN_SCENARIO_LENGTH:
            raise ValueError(
                f"Scenario length must be >= {MIN_SCENARIO_LENGTH}, got {self.length}"
            )
        if self.season_length < 2:
            raise ValueError(f"season_length must be >= 2, got {self.season_length}")
        if self.noise_std <= 0:
            raise ValueError(f"noise_std must be positive, got {self.noise_std}")
        if not -1 < self.ar_coef < 1:
            raise ValueError(f"ar_coef must lie in (-1, 1), got {self.ar_coef}")
        if self.schedule is not None:
            schedule = tuple((int(s), p) for s, p in self.schedule)
            starts = [s for s, _ in schedule]
            if not starts or starts[0] != 0 or starts != sorted(set(starts)):
                raise ValueError("Schedule starts must begin at 0 and strictly increase")
            object.__setattr__(self, "schedule", schedule)

    @property
    def name(self) -> str:
        return self.kind.dataset_name

    @property
    def stationary_noise_std(self) -> float:
        return self.noise_std / np.sqrt(1.0 - self.ar_coef**2)


def _cycle(regimes: typing.Sequence[RegimeParams], segment: int, length: int) -> Schedule:
    return tuple(
        (start, regimes[i % len(regimes)])
        for i, start in enumerate(range(0, length, segment))
    )


def default_schedule(spec: ScenarioSpec, rng: np.random.Generator) -> Schedule:
    """
    Piecewise regime schedule of a scenario

    Parameters
    ----------
    spec: ScenarioSpec
        Scenario definition.
    rng: numpy.random.Generator
        Generator used by scenarios with random regime order.
    """
    base = RegimeParams(0.0, spec.amplitude, 1.0)
    kind = spec.kind
    if kind is ScenarioKind.FAST_SWITCH:
        return _cycle(FAST_SWITCH_REGIMES, FAST_SWITCH_SEASONS * spec.season_length, spec.length)
    if kind is ScenarioKind.RECURRING:
        return _cycle(RECURRING_REGIMES, RECURRING_SEGMENT, spec.length)
    if kind is ScenarioKind.MULTI_REGIME:
        order = []
        n_segments = -(-spec.length // MULTI_REGIME_SEGMENT)
        while len(order) < n_segments:
            order.extend(rng.permutation(len(MULTI_REGIMES)).tolist())
        return tuple(
            (i * MULTI_REGIME_SEGMENT, MULTI_REGIMES[r])
            for i, r in enumerate(order[:n_segments])
        )
    return ((0, base),)


def _expand(schedule: Schedule, length: int) -> typing.Tuple[np.ndarray, np.ndarray, np.ndarray]:
    starts = np.array([s for s, _ in schedule])
    which = np.searchsorted(starts, np.arange(length), side="right") - 1
    params = [p for _, p in schedule]
    level = np.array([p.level for p in params])[which]
    amplitude = np.array([p.amplitude for p in params])[which]
    noise_scale = np.array([p.noise_scale for p in params])[which]
    return level, amplitude, noise_scale


def ar1_noise(
    scale: np.ndarray, ar_coef: float, noise_std: float, rng: np.random.Generator
) -> np.ndarray:
    """AR(1) noise with per-sample innovation scale, started from stationarity"""
    innovations = rng.standard_normal(len(scale)) * noise_std * scale
    innovations[0] /= np.sqrt(1.0 - ar_coef**2)
    return signal.lfilter([1.0], [1.0, -ar_coef], innovations)


def generate(spec: ScenarioSpec) -> TimeSeriesDataset:
    """
    Generate a synthetic scenario

    The output is a pure function of ``spec``, the same spec always
    gives a bit-identical series.

    Parameters
    ----------
    spec: ScenarioSpec
        Scenario definition.

    Returns
    -------
    TimeSeriesDataset
        Dataset named ``synth_<kind>``.

    Examples
    --------

    .. testcode:: generate

       from regime_tta.datagen import ScenarioSpec, generate

       dataset = generate(ScenarioSpec("recurring", seed=1))
       assert len(dataset) == 10_000
    """
    rng = np.random.default_rng(spec.seed)
    schedule = spec.schedule or default_schedule(spec, rng)
    level, amplitude, noise_scale = _expand(schedule, spec.length)
    t = np.arange(spec.length, dtype=np.float64)
    n = spec.length

    kind = spec.kind
    if kind is ScenarioKind.TREND_BREAK:
        mid = n // 2
        level = level + TREND_SLOPE * np.where(t < mid, t, 2 * mid - t)
    elif kind is ScenarioKind.SLOW_DRIFT:
        level = level + DRIFT_TOTAL * t / (n - 1)
    elif kind is ScenarioKind.VOLATILITY:
        lo, hi = VOLATILITY_RANGE
        phase = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / VOLATILITY_PERIOD))
        noise_scale = noise_scale * (lo + (hi - lo) * phase)
    elif kind is ScenarioKind.SHOCK_RECOVERY:
        onset = int(SHOCK_POSITION * n)
        shock = SHOCK_SIZE * spec.stationary_noise_std
        decay = np.exp(-(t - onset) / SHOCK_DECAY)
        level = level + np.where(t >= onset, shock * decay, 0.0)

    seasonal = amplitude * np.sin(2.0 * np.pi * t / spec.season_length)
    noise = ar1_noise(noise_scale, spec.ar_coef, spec.noise_std, rng)
    return TimeSeriesDataset(
        name=spec.name,
        values=level + seasonal + noise,
        frequency="synthetic",
        season_length=spec.season_length,
    )


def lookup_dataset(name: str) -> typing.Tuple[int, str]:
    """
    Season length and frequency label of a named dataset

    Raises
    ------
    ValueError
        If the name matches no known dataset family.
    """
    key = name.lower()
    for prefix, entry in DATASET_TABLE.items():
        if key.startswith(prefix):
            return entry
    raise ValueError(
        f"Unknown dataset family for {name!r}; pass season_length explicitly "
        f"(known prefixes: {', '.join(DATASET_TABLE)})"
    )


def load_csv(
    path: typing.Union[str, os.PathLike],
    target: typing.Optional[str] = "OT",
    season_length: typing.Optional[int] = None,
    name: typing.Optional[str] = None,
) -> TimeSeriesDataset:
    """
    Load the target channel of an ETT-style CSV file

    The file needs a header row. The first column (a timestamp) only
    fixes the row order and is otherwise ignored.

    Parameters
    ----------
    path: str or pathlib.Path
        CSV file.
    target: str, optional
        Target column header, default ``OT``. ``None`` selects the last
        column.
    season_length: int, optional
        Samples per season. Looked up from the dataset name if omitted.
    name: str, optional
        Dataset name, defaults to the file stem.

    Returns
    -------
    TimeSeriesDataset
        Target values in file order.

    Raises
    ------
    ValueError
        On a missing target column, a non-numeric cell or a missing
        value, naming the offending row and column.
    """
    path = pathlib.Path(path)
    name = name or path.stem
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if df.shape[1] < 2:
        raise ValueError(f"{path}: expected a timestamp column and at least one value column")
    column = df.columns[-1] if target is None else target
    if column not in df.columns:
        raise ValueError(
            f"{path}: target column {column!r} not found, columns are {list(df.columns)}"
        )
    raw = df[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna()
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        cell = raw.iloc[row]
        if cell == "" or cell.lower() in ("nan", "na", "null", "none"):
            raise ValueError(f"{path}: missing value at data row {row + 1}, column {column!r}")
        raise ValueError(
            f"{path}: non-numeric value {cell!r} at data row {row + 1}, column {column!r}"
        )
    try:
        table_season, frequency = lookup_dataset(name)
    except ValueError:
        if season_length is None:
            raise
        table_season, frequency = season_length, "unknown"
    season_length = season_length or table_season
    logger.debug("Loaded %d rows of %s from %s", len(values), column, path)
    return TimeSeriesDataset(
        name=name,
        values=values.to_numpy(dtype=np.float64),
        frequency=frequency,
        season_length=season_length,
    )


def write_csv(dataset: TimeSeriesDataset, path: typing.Union[str, os.PathLike]):
    """
    Write a dataset in the ETT-style format read by :py:func:`load_csv`

    Values are written at full precision so loading the file
    reproduces them exactly.
    """
    df = pd.DataFrame(
        {
            "date": pd.date_range("2020-01-01", periods=len(dataset), freq="h"),
            "OT": dataset.values,
        }
    )
    df.to_csv(path, index=False, float_format="%.17g")


def resolve_dataset(name: str, data_seed: int = 0, length: int = 10_000) -> TimeSeriesDataset:
    """
    Dataset from a scenario name or a CSV path

    ``synth_<kind>`` names generate a scenario with ``data_seed``,
    anything else is read as a CSV file.

    Raises
    ------
    ValueError
        If the name is neither a scenario nor an existing file.
    """
    if name.startswith(SYNTH_PREFIX):
        kind = name[len(SYNTH_PREFIX) :]
        try:
            return generate(ScenarioSpec(kind, length=length, seed=data_seed))
        except ValueError as exc:
            raise ValueError(f"Unknown scenario {name!r}: {exc}") from exc
    path = pathlib.Path(name)
    if not path.is_file():
        raise ValueError(
            f"Dataset {name!r} is neither a scenario ({', '.join(SCENARIO_NAMES)}) "
            "nor an existing CSV file"
        )
    return load_csv(path)


def check_length(dataset: TimeSeriesDataset, initial_train_size: int, batch_size: int):
    """Raise if a dataset cannot hold the initial training rows and one batch"""
    needed = initial_train_size + batch_size
    if len(dataset) < needed:
        raise InsufficientDataError(
            f"Dataset {dataset.name} has {len(dataset)} rows, needs at least {needed}"
        )
