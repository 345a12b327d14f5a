"""
Two-layer GRU forecaster with an MLP head

The backbone runs a 2-layer gated recurrent network over the scaled
input window and returns the last hidden state of the top layer. The
head maps that embedding to the horizon through
``hidden -> hidden (tanh) -> H``. Gradients are exact back-propagation
through time over the full window.
"""
import typing

import numpy as np
from scipy.special import expit

from regime_tta.forecast.base import BaseForecaster, LayerTerms, ModelWeights, unflatten

N_LAYERS = 2


class GRUSmall(BaseForecaster):
    """
    Compact recurrent forecaster

    Gate order in the stacked weight matrices is (reset, update, new),
    with separate input and hidden biases.
    """

    arch = "gru_small"

    def __init__(self, seq_len: int, horizon: int, hidden: int = 64):
        super().__init__(seq_len, horizon)
        self.hidden = hidden

    @property
    def meta(self):
        return {**super().meta, "hidden": self.hidden}

    @property
    def backbone_shapes(self):
        m = self.hidden
        shapes = []
        for layer in range(N_LAYERS):
            d = 1 if layer == 0 else m
            shapes.extend([(3 * m, d), (3 * m, m), (3 * m,), (3 * m,)])
        return shapes

    @property
    def head_layers(self):
        return [(self.hidden, self.hidden), (self.horizon, self.hidden)]

    def init_weights(self, rng: np.random.Generator) -> ModelWeights:
        bound = 1.0 / np.sqrt(self.hidden)
        n_backbone = sum(int(np.prod(s)) for s in self.backbone_shapes)
        backbone = rng.uniform(-bound, bound, size=n_backbone)
        return ModelWeights(self.arch, backbone, self.init_head_layers(rng), self.meta)

    def _layers(self, backbone: np.ndarray):
        params = unflatten(backbone, self.backbone_shapes)
        return [params[4 * i : 4 * i + 4] for i in range(N_LAYERS)]

    def backbone(self, weights, X, keep_cache=False):
        X = np.atleast_2d(X)
        n, L = X.shape
        m = self.hidden
        inp = X[:, :, None]
        caches = []
        h = None
        for W_ih, W_hh, b_ih, b_hh in self._layers(weights.backbone):
            # Input contributions do not depend on the recurrence
            gi_all = inp @ W_ih.T + b_ih
            h = np.zeros((n, m))
            outs = np.empty((n, L, m))
            steps = []
            for t in range(L):
                gi = gi_all[:, t]
                gh = h @ W_hh.T + b_hh
                r = expit(gi[:, :m] + gh[:, :m])
                z = expit(gi[:, m : 2 * m] + gh[:, m : 2 * m])
                n_gate = np.tanh(gi[:, 2 * m :] + r * gh[:, 2 * m :])
                h_prev = h
                h = (1.0 - z) * n_gate + z * h_prev
                outs[:, t] = h
                if keep_cache:
                    steps.append((h_prev, r, z, n_gate, gh[:, 2 * m :]))
            if keep_cache:
                caches.append((inp, steps))
            inp = outs
        return h, (caches if keep_cache else None)

    def backbone_backward(self, weights, cache, dZ):
        if cache is None:
            raise ValueError("backbone_backward needs a forward pass with keep_cache=True")
        layers = self._layers(weights.backbone)
        m = self.hidden
        grads: typing.List[typing.List[np.ndarray]] = [None] * N_LAYERS
        d_outs = None
        for layer in reversed(range(N_LAYERS)):
            W_ih, W_hh, _, _ = layers[layer]
            inp, steps = cache[layer]
            n, L, d = inp.shape
            if d_outs is None:
                d_outs = np.zeros((n, L, m))
                d_outs[:, -1] = dZ
            dgi_all = np.empty((n, L, 3 * m))
            g_W_hh = np.zeros_like(W_hh)
            g_b_hh = np.zeros(3 * m)
            dh = np.zeros((n, m))
            for t in reversed(range(L)):
                h_prev, r, z, n_gate, gh_n = steps[t]
                dh = dh + d_outs[:, t]
                dz = dh * (h_prev - n_gate)
                da_n = dh * (1.0 - z) * (1.0 - n_gate**2)
                da_r = da_n * gh_n * r * (1.0 - r)
                da_z = dz * z * (1.0 - z)
                dgi = np.concatenate([da_r, da_z, da_n], axis=1)
                dgh = np.concatenate([da_r, da_z, da_n * r], axis=1)
                dgi_all[:, t] = dgi
                g_W_hh += dgh.T @ h_prev
                g_b_hh += dgh.sum(axis=0)
                dh = dh * z + dgh @ W_hh
            flat_dgi = dgi_all.reshape(-1, 3 * m)
            g_W_ih = flat_dgi.T @ inp.reshape(-1, d)
            g_b_ih = flat_dgi.sum(axis=0)
            grads[layer] = [g_W_ih, g_W_hh, g_b_ih, g_b_hh]
            d_outs = dgi_all @ W_ih
        return np.concatenate([g.ravel() for layer in grads for g in layer])

    def head_forward(self, head, Z):
        W1, b1, W2, b2 = unflatten(head, self.head_shapes)
        a1 = np.tanh(Z @ W1.T + b1)
        return a1 @ W2.T + b2, (Z, a1)

    def head_backward(self, head, cache, dpred) -> typing.Tuple[LayerTerms, np.ndarray]:
        W1, _, W2, _ = unflatten(head, self.head_shapes)
        Z, a1 = cache
        delta1 = (dpred @ W2) * (1.0 - a1**2)
        return [(delta1, Z), (dpred, a1)], delta1 @ W1
