"""
Decomposition-linear forecaster

The input is split into a moving-average trend and a seasonal
remainder, and each part gets its own linear map to the horizon. The
decomposition has no parameters, so the whole model is head.
"""
import typing

import numpy as np

from regime_tta.forecast.base import BaseForecaster, LayerTerms, ModelWeights, unflatten

KERNEL_SIZE = 25


def moving_average(X: np.ndarray, kernel: int = KERNEL_SIZE) -> np.ndarray:
    """
    Centred moving average along the last axis with edge-replicated padding

    Parameters
    ----------
    X: numpy.ndarray
        Array of shape ``(n, L)``.
    kernel: int
        Odd window length.
    """
    if kernel % 2 != 1:
        raise ValueError(f"Kernel size must be odd, got {kernel}")
    pad = (kernel - 1) // 2
    padded = np.pad(X, ((0, 0), (pad, pad)), mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=1).mean(axis=2)


def decompose(X: np.ndarray, kernel: int = KERNEL_SIZE) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Split windows into ``(trend, seasonal)`` with ``trend + seasonal == X``"""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    trend = moving_average(X, kernel)
    return trend, X - trend


class DLinear(BaseForecaster):
    """
    Trend/seasonal linear forecaster

    ``pred = W_trend @ trend + b_trend + W_seas @ seasonal + b_seas``
    """

    arch = "dlinear"

    def __init__(self, seq_len: int, horizon: int, kernel: int = KERNEL_SIZE):
        super().__init__(seq_len, horizon)
        self.kernel = kernel

    @property
    def backbone_shapes(self):
        return []

    @property
    def head_layers(self):
        return [(self.horizon, self.seq_len), (self.horizon, self.seq_len)]

    def init_weights(self, rng: np.random.Generator) -> ModelWeights:
        # Both maps start as a plain average of their input
        L, H = self.seq_len, self.horizon
        W = np.full(H * L, 1.0 / L)
        b = np.zeros(H)
        head = np.concatenate([W, b, W.copy(), b.copy()])
        return ModelWeights(self.arch, np.zeros(0), head, self.meta)

    def backbone(self, weights, X, keep_cache=False):
        trend, seasonal = decompose(X, self.kernel)
        return np.concatenate([trend, seasonal], axis=1), None

    def backbone_backward(self, weights, cache, dZ):
        return np.zeros(0)

    def head_forward(self, head, Z):
        W_t, b_t, W_s, b_s = unflatten(head, self.head_shapes)
        L = self.seq_len
        trend, seasonal = Z[:, :L], Z[:, L:]
        pred = trend @ W_t.T + b_t + seasonal @ W_s.T + b_s
        return pred, (trend, seasonal)

    def head_backward(self, head, cache, dpred) -> typing.Tuple[LayerTerms, np.ndarray]:
        W_t, _, W_s, _ = unflatten(head, self.head_shapes)
        trend, seasonal = cache
        dZ = np.concatenate([dpred @ W_t, dpred @ W_s], axis=1)
        return [(dpred, trend), (dpred, seasonal)], dZ
