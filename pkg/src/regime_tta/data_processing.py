"""
Utilities to turn run records into summary tables
"""

import typing

import numpy as np
import pandas as pd

from regime_tta.core import InsufficientDataError
from regime_tta.harness.metrics import METRIC_NAMES
from regime_tta.harness.runner import RunRecord
from regime_tta.stats import bonferroni, wilcoxon_signed_rank

CONFIG_KEYS = ["model", "dataset", "horizon"]
DEFAULT_PAIRS = (("rgtta", "tta"), ("rgtta_ewc", "ewc"), ("rgtta_dynatta", "dynatta"))


def records_to_dataframe(records: typing.Iterable[RunRecord]) -> pd.DataFrame:
    """
    Convert run records to a Pandas dataframe

    Parameters
    ----------
    records: list[RunRecord]
        Records returned by :py:func:`regime_tta.harness.run_stream`.

    Returns
    -------
    pandas.DataFrame
        One row per record with run identifiers, metrics, adaptation
        time and the adaptation report fields. Per-step learning rates
        are summarised by ``mean_lr``.
    """
    return pd.DataFrame.from_records([r.to_dict(include_lr=False) for r in records])


def aggregate(
    records: typing.Union[pd.DataFrame, typing.Iterable[RunRecord]],
    metrics: typing.Sequence[str] = METRIC_NAMES,
) -> pd.DataFrame:
    """
    Seed-averaged metrics per policy and configuration

    Metrics are averaged over batches within each run, then over seeds.

    Parameters
    ----------
    records: pandas.DataFrame or list[RunRecord]
        Run records.
    metrics: list[str], optional
        Metric columns to average.

    Returns
    -------
    pandas.DataFrame
        Columns ``policy``, ``model``, ``dataset``, ``horizon``, the
        averaged metrics, ``steps_used``, ``adapt_time_seconds`` and
        ``n_seeds``, sorted by configuration and policy.

    Notes
    -----
    The result does not depend on the order of the records.
    """
    df = records if isinstance(records, pd.DataFrame) else records_to_dataframe(records)
    if len(df) == 0:
        raise ValueError("Cannot aggregate an empty set of records")
    keys = ["policy"] + CONFIG_KEYS
    columns = list(metrics) + ["steps_used", "adapt_time_seconds"]
    df = df.sort_values(keys + ["seed", "batch_index"])
    per_run = df.groupby(keys + ["seed"], sort=True)[columns].mean().reset_index()
    summary = per_run.groupby(keys, sort=True)[columns].mean()
    summary["n_seeds"] = per_run.groupby(keys, sort=True)["seed"].nunique()
    summary = summary.reset_index()
    return summary[CONFIG_KEYS + ["policy"] + columns + ["n_seeds"]].sort_values(
        CONFIG_KEYS + ["policy"], ignore_index=True
    )


def metric_matrix(summary: pd.DataFrame, metric: str = "mse") -> pd.DataFrame:
    """Configurations as rows, policies as columns"""
    return summary.pivot_table(index=CONFIG_KEYS, columns="policy", values=metric)


def win_counts(summary: pd.DataFrame, metric: str = "mse") -> pd.DataFrame:
    """
    Number of configurations each policy wins

    A configuration is won by the policy with the lowest metric. Tied
    policies all get the win.

    Returns
    -------
    pandas.DataFrame
        Columns ``policy``, ``wins`` and ``configurations``, sorted by
        wins.
    """
    matrix = metric_matrix(summary, metric)
    best = matrix.min(axis=1)
    winners = matrix.eq(best, axis=0)
    wins = winners.sum(axis=0).astype(int)
    df = pd.DataFrame(
        {"policy": wins.index, "wins": wins.to_numpy(), "configurations": len(matrix)}
    )
    return df.sort_values(["wins", "policy"], ascending=[False, True], ignore_index=True)


def pairwise_table(
    summary: pd.DataFrame,
    pairs: typing.Sequence[typing.Tuple[str, str]] = DEFAULT_PAIRS,
    metric: str = "mse",
    alpha: float = 0.05,
) -> pd.DataFrame:
    """
    Regime-guided policies against their baselines

    For each ``(policy, baseline)`` pair present in the summary, the
    relative metric change over shared configurations, the number of
    configurations the policy wins, and a one-sided Wilcoxon
    signed-rank test of ``policy < baseline`` judged at the
    Bonferroni-corrected level.

    Returns
    -------
    pandas.DataFrame
        Columns ``policy``, ``baseline``, ``n``, ``delta_mean_pct``,
        ``delta_median_pct``, ``wins``, ``p_value``, ``alpha_corrected``
        and ``significant``. ``p_value`` is NaN when there are too few
        non-zero differences for the test.
    """
    matrix = metric_matrix(summary, metric)
    present = [(p, b) for p, b in pairs if p in matrix.columns and b in matrix.columns]
    corrected = bonferroni(alpha, max(len(present), 1))
    rows = []
    for policy, baseline in present:
        both = matrix[[policy, baseline]].dropna()
        ours, theirs = both[policy].to_numpy(), both[baseline].to_numpy()
        delta_pct = 100.0 * (ours - theirs) / np.where(theirs == 0, np.nan, theirs)
        try:
            p = wilcoxon_signed_rank(ours - theirs, alternative="less").p_value
        except InsufficientDataError:
            p = float("nan")
        rows.append(
            {
                "policy": policy,
                "baseline": baseline,
                "n": len(both),
                "delta_mean_pct": float(np.nanmean(delta_pct)) if len(both) else np.nan,
                "delta_median_pct": float(np.nanmedian(delta_pct)) if len(both) else np.nan,
                "wins": int(np.sum(ours < theirs)),
                "p_value": p,
                "alpha_corrected": corrected,
                "significant": bool(p < corrected),
            }
        )
    return pd.DataFrame(
        rows,
        columns=[
            "policy",
            "baseline",
            "n",
            "delta_mean_pct",
            "delta_median_pct",
            "wins",
            "p_value",
            "alpha_corrected",
            "significant",
        ],
    )
