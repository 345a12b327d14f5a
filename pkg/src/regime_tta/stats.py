"""
Statistical comparison of policies and checks of the convergence theory
"""
import dataclasses
import math
import typing

import numpy as np
import pandas as pd
from scipy import stats

from regime_tta.core import InsufficientDataError

MIN_WILCOXON_PAIRS = 6
EXACT_WILCOXON_MAX_N = 25

# Studentized range statistic divided by sqrt(2), for k = 2..10 groups
NEMENYI_Q = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}

ALTERNATIVES = ("two-sided", "less", "greater")


@dataclasses.dataclass(frozen=True)
class WilcoxonResult:
    """
    Wilcoxon signed-rank test outcome

    Attributes
    ----------
    statistic: float
        Sum of the ranks of positive differences.
    p_value: float
        P-value under the requested alternative.
    n: int
        Number of non-zero differences.
    exact: bool
        ``True`` if the p-value comes from the exact null distribution.
    """

    statistic: float
    p_value: float
    n: int
    exact: bool


def _signed_rank_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    # counts[s] = number of sign assignments whose doubled positive-rank sum is s
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(
    differences: typing.Sequence[float], alternative: str = "two-sided"
) -> WilcoxonResult:
    """
    Wilcoxon signed-rank test on paired differences

    Zero differences are dropped and tied absolute differences get
    their average rank. Up to 25 non-zero pairs the p-value is exact,
    computed from the full null distribution of the positive rank sum
    (ties included). Above that a normal approximation with tie
    correction is used.

    Parameters
    ----------
    differences: list or numpy.ndarray
        Paired differences, e.g. ``mse_rg - mse_baseline``.
    alternative: str, optional
        ``two-sided``, ``less`` (differences tend to be negative) or
        ``greater``.

    Returns
    -------
    WilcoxonResult
        Test outcome.

    Raises
    ------
    InsufficientDataError
        With fewer than 6 non-zero differences.

    Examples
    --------

    .. testcode:: wilcoxon

       import numpy as np
       from regime_tta.stats import wilcoxon_signed_rank

       result = wilcoxon_signed_rank(-np.arange(1.0, 11.0), alternative="less")
       assert np.isclose(result.p_value, 1 / 1024)
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"alternative must be one of {ALTERNATIVES}, got {alternative!r}")
    d = np.asarray(differences, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("Differences must be finite")
    d = d[d != 0]
    n = len(d)
    if n < MIN_WILCOXON_PAIRS:
        raise InsufficientDataError(
            f"Wilcoxon test needs at least {MIN_WILCOXON_PAIRS} non-zero pairs, got {n}"
        )
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _signed_rank_counts(doubled)
        total = float(2**n)
        w2 = int(round(2 * w_plus))
        p_low = counts[: w2 + 1].sum() / total
        p_high = counts[w2:].sum() / total
        exact = True
    else:
        _, tie_counts = np.unique(ranks, return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
        z = (w_plus - mean) / math.sqrt(var)
        p_low = stats.norm.cdf(z)
        p_high = stats.norm.sf(z)
        exact = False

    if alternative == "less":
        p = p_low
    elif alternative == "greater":
        p = p_high
    else:
        p = min(1.0, 2.0 * min(p_low, p_high))
    return WilcoxonResult(w_plus, float(p), n, exact)


@dataclasses.dataclass(frozen=True)
class FriedmanResult:
    """
    Friedman test outcome

    Attributes
    ----------
    statistic: float
        Chi-square statistic.
    p_value: float
        Upper-tail chi-square probability with ``k - 1`` degrees of
        freedom.
    avg_ranks: numpy.ndarray
        Mean rank of each column, rank 1 being the smallest value.
    n: int
        Number of rows (configurations).
    """

    statistic: float
    p_value: float
    avg_ranks: np.ndarray
    n: int


def friedman_from_ranks(avg_ranks: typing.Sequence[float], n: int) -> FriedmanResult:
    """
    Friedman statistic from the mean ranks of ``k`` methods over ``n`` rows

    ``12 n / (k (k + 1)) * (sum(R ** 2) - k (k + 1) ** 2 / 4)``
    """
    avg_ranks = np.asarray(avg_ranks, dtype=np.float64)
    k = len(avg_ranks)
    if k < 2 or n < 2:
        raise ValueError(f"Friedman test needs k >= 2 methods and N >= 2 rows, got {k}, {n}")
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(avg_ranks**2) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(float(chi2), 0.0)
    return FriedmanResult(chi2, float(stats.chi2.sf(chi2, k - 1)), avg_ranks, n)


def friedman(matrix: typing.Union[np.ndarray, pd.DataFrame]) -> FriedmanResult:
    """
    Friedman rank test over configurations

    Parameters
    ----------
    matrix: numpy.ndarray or pandas.DataFrame
        ``(N, k)`` array of errors, one row per configuration and one
        column per method. Ties in a row get average ranks.

    Returns
    -------
    FriedmanResult
        Statistic, p-value and mean ranks.

    Examples
    --------

    .. testcode:: friedman

       import numpy as np
       from regime_tta.stats import friedman

       result = friedman(np.tile([1.0, 2.0, 3.0], (4, 1)))
       assert np.isclose(result.statistic, 8.0)
    """
    values = np.asarray(matrix, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"Expected a 2-d (N, k) matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("Friedman matrix must be finite")
    ranks = stats.rankdata(values, axis=1)
    return friedman_from_ranks(ranks.mean(axis=0), values.shape[0])


def nemenyi_cd(k: int, n: int, alpha: float = 0.05) -> float:
    """
    Nemenyi critical difference of mean ranks

    ``q_alpha(k) * sqrt(k (k + 1) / (6 n))``

    Parameters
    ----------
    k: int
        Number of methods, 2 to 10.
    n: int
        Number of configurations.
    alpha: float, optional
        Significance level, 0.05 or 0.10.
    """
    if alpha not in NEMENYI_Q:
        raise ValueError(f"alpha must be one of {sorted(NEMENYI_Q)}, got {alpha}")
    if not 2 <= k <= 10:
        raise ValueError(f"Nemenyi q values are tabulated for 2 <= k <= 10, got {k}")
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return NEMENYI_Q[alpha][k - 2] * math.sqrt(k * (k + 1) / (6.0 * n))


def bonferroni(alpha: float, m: int) -> float:
    """Per-comparison significance level for ``m`` comparisons"""
    if m < 1:
        raise ValueError(f"Number of comparisons must be positive, got {m}")
    return alpha / m


def critical_difference_data(
    avg_ranks: typing.Mapping[str, float], cd: float
) -> pd.DataFrame:
    """
    Table for plotting a critical-difference diagram

    Returns
    -------
    pandas.DataFrame
        Columns ``policy``, ``mean_rank``, ``cd`` and
        ``within_cd_of_best``, sorted by mean rank.
    """
    df = pd.DataFrame(
        {"policy": list(avg_ranks), "mean_rank": [float(r) for r in avg_ranks.values()]}
    )
    df = df.sort_values(["mean_rank", "policy"]).reset_index(drop=True)
    df["cd"] = cd
    df["within_cd_of_best"] = df["mean_rank"] - df["mean_rank"].min() <= cd
    return df


def gd_rate(kappa: float) -> float:
    """Contraction rate ``(kappa - 1) / (kappa + 1)`` of optimally tuned gradient descent"""
    return (kappa - 1.0) / (kappa + 1.0)


def gd_contraction_check(kappa: float, steps: int = 50, dim: int = 10) -> float:
    """
    Measured per-step contraction of gradient descent on a quadratic

    Runs gradient descent at the step size ``2 / (mu + L)`` on a
    diagonal quadratic whose curvatures are spread evenly over
    ``[1, kappa]``, starting from an all-ones error vector. The
    returned rate is the ratio of successive error norms at the last
    step, where the slowest directions dominate, so it approaches
    ``(kappa - 1) / (kappa + 1)`` from below.

    Parameters
    ----------
    kappa: float
        Condition number, at least 1.
    steps: int
        Number of gradient steps.
    dim: int
        Problem dimension.
    """
    if kappa < 1:
        raise ValueError(f"Condition number must be >= 1, got {kappa}")
    curvature = np.linspace(1.0, kappa, dim)
    alpha = 2.0 / (1.0 + kappa)
    error = np.ones(dim)
    rate = 0.0
    for _ in range(steps):
        prev = np.linalg.norm(error)
        if prev == 0:
            break
        error = error - alpha * curvature * error
        rate = float(np.linalg.norm(error) / prev)
    return rate


def step_savings(similarity: float, rho: float) -> float:
    """
    Gradient steps saved by starting from a matching checkpoint

    ``-ln(1 - similarity) / |ln rho|``
    """
    if not 0 <= similarity < 1:
        raise ValueError(f"similarity must lie in [0, 1), got {similarity}")
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    return -math.log(1.0 - similarity) / abs(math.log(rho))


@dataclasses.dataclass(frozen=True)
class GateSufficiency:
    """
    Outcome of :py:func:`loss_gate_sufficiency_check`

    Attributes
    ----------
    bound: float
        ``sqrt(gate * kappa)``.
    max_ratio: float
        Largest observed ``|ckpt - opt| / |curr - opt|`` among pairs
        passing the loss gate.
    n_passed: int
        Number of pairs passing the loss gate.
    """

    bound: float
    max_ratio: float
    n_passed: int

    @property
    def holds(self) -> bool:
        return self.max_ratio < self.bound


def loss_gate_sufficiency_check(
    gate: float = 0.70,
    kappa: float = 10.0,
    trials: int = 1000,
    dim: int = 10,
    seed: int = 0,
) -> GateSufficiency:
    """
    Check on random quadratics that passing the loss gate bounds parameter distance

    For a quadratic loss with curvatures in ``[mu, kappa * mu]``,
    ``loss_ckpt < gate * loss_curr`` implies
    ``|ckpt - opt| < sqrt(gate * kappa) * |curr - opt|``. Random pairs
    of points are drawn and the largest distance ratio among pairs
    passing the gate is reported.
    """
    if not 0 < gate < 1 or kappa < 1:
        raise ValueError("gate must lie in (0, 1) and kappa be >= 1")
    rng = np.random.default_rng(seed)
    max_ratio = 0.0
    n_passed = 0
    for _ in range(trials):
        curvature = rng.uniform(1.0, kappa, size=dim)
        curvature[:2] = (1.0, kappa)
        e_curr = rng.standard_normal(dim) * rng.uniform(0.1, 10.0)
        e_ckpt = rng.standard_normal(dim) * rng.uniform(0.1, 10.0)
        loss_curr = 0.5 * np.dot(curvature, e_curr**2)
        loss_ckpt = 0.5 * np.dot(curvature, e_ckpt**2)
        if loss_ckpt < gate * loss_curr:
            n_passed += 1
            max_ratio = max(max_ratio, np.linalg.norm(e_ckpt) / np.linalg.norm(e_curr))
    return GateSufficiency(math.sqrt(gate * kappa), float(max_ratio), n_passed)
