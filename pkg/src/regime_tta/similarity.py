"""
Distributional regime fingerprints and ensemble similarity

A batch is fingerprinted by its mean, standard deviation, skewness,
excess kurtosis and lag-1 autocorrelation, computed over the most
recent ``3 * season_length`` raw target samples. The raw samples are
kept alongside the moments so that two-sample statistics (KS and
Wasserstein-1) can be computed between a query and a stored regime.
"""
import dataclasses
import typing

import numpy as np
from scipy import stats

from regime_tta.core import InsufficientDataError

EPS = 1e-8
MIN_FEATURE_SAMPLES = 8
SEASONS_PER_WINDOW = 3


@dataclasses.dataclass(frozen=True)
class RegimeFeatures:
    """
    5-d distributional fingerprint of a batch

    Attributes
    ----------
    mean: float
        Sample mean.
    std: float
        Population standard deviation.
    skewness: float
        Sample skewness.
    excess_kurtosis: float
        Sample excess kurtosis.
    lag1_autocorr: float
        Lag-1 autocorrelation, in ``[-1, 1]``.
    raw_sample: numpy.ndarray
        Raw values the moments were computed from.
    """

    mean: float
    std: float
    skewness: float
    excess_kurtosis: float
    lag1_autocorr: float
    raw_sample: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                self.mean,
                self.std,
                self.skewness,
                self.excess_kurtosis,
                self.lag1_autocorr,
            ]
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "lag1_autocorr": self.lag1_autocorr,
        }


def extract_features(
    series: typing.Sequence[float], season_length: int
) -> RegimeFeatures:
    """
    Fingerprint the trailing window of a series

    Parameters
    ----------
    series: list or numpy.ndarray
        Raw target values, most recent last.
    season_length: int
        Samples per season; the trailing ``3 * season_length`` samples
        are used (or all samples when fewer are available).

    Returns
    -------
    RegimeFeatures
        Moments of the trailing window. A constant window gives zero
        skewness, kurtosis and autocorrelation.

    Raises
    ------
    InsufficientDataError
        If fewer than 8 samples are available.
    """
    values = np.asarray(series, dtype=np.float64)
    window = values[-SEASONS_PER_WINDOW * season_length :]
    if len(window) < MIN_FEATURE_SAMPLES:
        raise InsufficientDataError(
            f"Need at least {MIN_FEATURE_SAMPLES} samples, got {len(window)}"
        )
    if not np.all(np.isfinite(window)):
        raise ValueError("Cannot extract features from non-finite values")

    mean = float(window.mean())
    std = float(window.std())
    if std == 0.0:
        return RegimeFeatures(mean, 0.0, 0.0, 0.0, 0.0, window.copy())

    centred = window - mean
    r1 = float(np.dot(centred[:-1], centred[1:]) / np.dot(centred, centred))

    return RegimeFeatures(
        mean=mean,
        std=std,
        skewness=float(stats.skew(window)),
        excess_kurtosis=float(stats.kurtosis(window, fisher=True)),
        lag1_autocorr=float(np.clip(r1, -1.0, 1.0)),
        raw_sample=window.copy(),
    )


def _check_sample(x: typing.Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("Similarity requires non-empty samples")
    return x


def ks_similarity(a: typing.Sequence[float], b: typing.Sequence[float]) -> float:
    """
    One minus the two-sample Kolmogorov-Smirnov statistic

    Examples
    --------

    .. testcode:: ks_similarity

       from regime_tta.similarity import ks_similarity

       assert ks_similarity([1, 2, 3, 4], [2, 3, 4, 5]) == 0.75
    """
    a, b = _check_sample(a), _check_sample(b)
    d_n = stats.ks_2samp(a, b, method="asymp").statistic
    return float(1.0 - d_n)


def wasserstein_similarity(
    a: typing.Sequence[float], b: typing.Sequence[float]
) -> float:
    """
    Range-normalised Wasserstein-1 similarity

    ``1 / (1 + W1(a, b) / max(ptp(a), ptp(b), eps))``, with the exact 1-d
    Wasserstein-1 distance for samples of any size.
    """
    a, b = _check_sample(a), _check_sample(b)
    w1 = stats.wasserstein_distance(a, b)
    scale = max(np.ptp(a), np.ptp(b), EPS)
    return float(1.0 / (1.0 + w1 / scale))


def feature_similarity(q: RegimeFeatures, s: RegimeFeatures) -> float:
    """Similarity from the normalised Euclidean distance of two fingerprints"""
    qv, sv = q.as_vector(), s.as_vector()
    if not (np.all(np.isfinite(qv)) and np.all(np.isfinite(sv))):
        raise ValueError("Feature vectors must be finite")
    dist = np.linalg.norm(qv - sv)
    scale = (np.linalg.norm(qv) + np.linalg.norm(sv)) / 2.0 + EPS
    return float(1.0 / (1.0 + dist / scale))


def variance_ratio_similarity(sigma_q: float, sigma_s: float) -> float:
    """
    Ratio of the smaller to the larger standard deviation

    Equal volatilities give exactly 1, including two zero volatilities.
    """
    if sigma_q < 0 or sigma_s < 0:
        raise ValueError("Standard deviations must be non-negative")
    lo, hi = min(sigma_q, sigma_s), max(sigma_q, sigma_s)
    if lo == hi:
        return 1.0
    return float(lo / (hi + EPS))


class ComponentSimilarities(typing.NamedTuple):
    ks: float
    wasserstein: float
    feature: float
    variance: float


@dataclasses.dataclass(frozen=True)
class SimilarityWeights:
    """
    Weights of the four similarity components

    Defaults to ``(0.3, 0.3, 0.2, 0.2)``: the two-sample tests get
    the larger share.
    """

    ks: float = 0.3
    wasserstein: float = 0.3
    feature: float = 0.2
    variance: float = 0.2

    def __post_init__(self):
        w = np.array([self.ks, self.wasserstein, self.feature, self.variance])
        if np.any(w < 0):
            raise ValueError("Similarity weights must be non-negative")
        if not np.isclose(w.sum(), 1.0):
            raise ValueError(f"Similarity weights must sum to 1, got {w.sum()}")

    @classmethod
    def preset(cls, name: str) -> "SimilarityWeights":
        """
        Named weightings: ``ensemble`` or a single component
        (``ks``, ``wasserstein``, ``feature``, ``variance``)
        """
        if name == "ensemble":
            return cls()
        if name not in SIMILARITY_PRESETS:
            raise ValueError(
                f"Unknown similarity preset {name!r}, "
                f"expected one of {sorted(SIMILARITY_PRESETS)}"
            )
        single = dict.fromkeys(("ks", "wasserstein", "feature", "variance"), 0.0)
        single[name] = 1.0
        return cls(**single)


SIMILARITY_PRESETS = ("ensemble", "ks", "wasserstein", "feature", "variance")


def component_similarities(
    q: RegimeFeatures, s: RegimeFeatures
) -> ComponentSimilarities:
    """Compute the four component similarities between two fingerprints"""
    return ComponentSimilarities(
        ks=ks_similarity(q.raw_sample, s.raw_sample),
        wasserstein=wasserstein_similarity(q.raw_sample, s.raw_sample),
        feature=feature_similarity(q, s),
        variance=variance_ratio_similarity(q.std, s.std),
    )


def ensemble_similarity(
    q: RegimeFeatures,
    s: RegimeFeatures,
    weights: typing.Optional[SimilarityWeights] = None,
) -> float:
    """
    Weighted ensemble of the four similarity components

    Parameters
    ----------
    q: RegimeFeatures
        Query fingerprint.
    s: RegimeFeatures
        Stored fingerprint.
    weights: SimilarityWeights, optional
        Component weights, default ``(0.3, 0.3, 0.2, 0.2)``.

    Returns
    -------
    float
        Similarity clamped to ``[0, 1]``.
    """
    weights = weights or SimilarityWeights()
    c = component_similarities(q, s)
    sim = (
        weights.ks * c.ks
        + weights.wasserstein * c.wasserstein
        + weights.feature * c.feature
        + weights.variance * c.variance
    )
    return float(min(1.0, max(0.0, sim)))
