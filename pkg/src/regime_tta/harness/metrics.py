"""
Forecast error metrics
"""
import dataclasses

import numpy as np

EPS = 1e-8
WMAPE_DECAY = 0.97


@dataclasses.dataclass(frozen=True)
class Metrics:
    """Error metrics of one horizon forecast"""

    mse: float
    mae: float
    rmse: float
    smape: float
    wmape: float
    direction_accuracy: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


METRIC_NAMES = tuple(f.name for f in dataclasses.fields(Metrics))


def compute_metrics(
    pred: np.ndarray,
    truth: np.ndarray,
    prior: float,
    wmape_decay: float = WMAPE_DECAY,
) -> Metrics:
    """
    Error metrics of a horizon forecast

    Parameters
    ----------
    pred: numpy.ndarray
        Forecast of length ``H``.
    truth: numpy.ndarray
        Observed values of length ``H``.
    prior: float
        Last observed value before the horizon.
    wmape_decay: float, optional
        Horizon-step weight decay of wMAPE, default 0.97. Step ``i`` is
        weighted ``wmape_decay ** (H - 1 - i)``.

    Returns
    -------
    Metrics
        MSE, MAE, RMSE, sMAPE (percent), wMAPE (ratio) and direction
        accuracy.

    Notes
    -----
    Direction accuracy is the fraction of steps where the predicted
    change ``pred[i] - pred[i - 1]`` and the observed change
    ``truth[i] - truth[i - 1]`` have the same sign, with both series
    preceded by ``prior``. A zero change only matches a zero change.

    Examples
    --------

    .. testcode:: compute_metrics

       import numpy as np
       from regime_tta.harness import compute_metrics

       m = compute_metrics(np.array([1., 2., 3.]), np.array([2., 2., 4.]), 1.0)
       assert np.isclose(m.mse, 2 / 3)
       assert np.isclose(m.direction_accuracy, 1 / 3)
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(
            f"pred and truth must be equal-length 1-d arrays, got {pred.shape} and {truth.shape}"
        )
    err = pred - truth
    abs_err = np.abs(err)
    mse = float(np.mean(err**2))
    H = len(truth)

    smape = float(100.0 / H * np.sum(2.0 * abs_err / (np.abs(pred) + np.abs(truth) + EPS)))
    w = wmape_decay ** (H - 1 - np.arange(H))
    wmape = float(np.sum(w * abs_err) / max(np.sum(w * np.abs(truth)), EPS))

    d_pred = np.sign(np.diff(pred, prepend=prior))
    d_truth = np.sign(np.diff(truth, prepend=prior))

    return Metrics(
        mse=mse,
        mae=float(np.mean(abs_err)),
        rmse=float(np.sqrt(mse)),
        smape=smape,
        wmape=wmape,
        direction_accuracy=float(np.mean(d_pred == d_truth)),
    )
