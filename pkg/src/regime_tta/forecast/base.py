"""
Base forecaster pattern and weight storage

Every forecaster is split into a frozen backbone, mapping an input
window to a feature vector, and a trainable head mapping features to
the forecast. The head is a stack of affine layers so that per-window
head gradients factor as outer products, which is what the gradient
and Fisher computations below rely on.
"""
import dataclasses
import json
import os
import typing

import numpy as np

from regime_tta.core import ScalerState

Shape = typing.Tuple[int, ...]
LayerTerms = typing.List[typing.Tuple[np.ndarray, np.ndarray]]


@dataclasses.dataclass(frozen=True)
class ModelSpec:
    """
    Architecture choice for a forecaster

    Parameters
    ----------
    arch: str
        ``dlinear`` or ``gru_small``.
    seq_len: int
        Input length ``L``.
    hidden: int
        Hidden size (GRU only).
    """

    arch: str
    seq_len: int = 96
    hidden: int = 64


@dataclasses.dataclass
class ModelWeights:
    """
    Flat parameter store of a forecaster

    Attributes
    ----------
    arch: str
        Architecture tag.
    backbone: numpy.ndarray
        Frozen-backbone parameters (may be empty).
    head: numpy.ndarray
        Trainable head parameters.
    meta: dict
        Shape metadata (``seq_len``, ``horizon``, ``hidden``).
    """

    arch: str
    backbone: np.ndarray
    head: np.ndarray
    meta: typing.Dict[str, int]

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.arch, self.backbone.copy(), self.head.copy(), dict(self.meta)
        )

    def with_head(self, head: np.ndarray) -> "ModelWeights":
        return ModelWeights(self.arch, self.backbone, head, self.meta)

    @property
    def n_params(self) -> int:
        return self.backbone.size + self.head.size

    def save(self, path: typing.Union[str, os.PathLike]):
        """
        Write the weights to an ``.npz`` file

        The file holds the architecture tag, the shape metadata and both
        parameter segments; loading it reproduces the arrays bit for bit.
        """
        with open(path, "wb") as f:
            np.savez(
                f,
                arch=np.array(self.arch),
                meta=np.array(json.dumps(self.meta, sort_keys=True)),
                backbone=self.backbone,
                head=self.head,
            )

    @classmethod
    def load(cls, path: typing.Union[str, os.PathLike]) -> "ModelWeights":
        """Read weights written by :py:meth:`ModelWeights.save`"""
        with np.load(path, allow_pickle=False) as data:
            return cls(
                arch=str(data["arch"]),
                backbone=data["backbone"].copy(),
                head=data["head"].copy(),
                meta=json.loads(str(data["meta"])),
            )


def unflatten(vec: np.ndarray, shapes: typing.Sequence[Shape]) -> typing.List[np.ndarray]:
    """Split a flat vector into reshaped views"""
    out, i = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(vec[i : i + size].reshape(shape))
        i += size
    if i != vec.size:
        raise ValueError(f"Parameter vector has {vec.size} entries, expected {i}")
    return out


class BaseForecaster:
    """
    Base forecaster with a frozen backbone and an affine-stack head

    Subclasses define ``arch``, ``backbone_shapes`` and ``head_layers``
    (``(out, in)`` per affine head layer) and implement
    :py:meth:`backbone`, :py:meth:`backbone_backward`,
    :py:meth:`head_forward` and :py:meth:`head_backward`.
    """

    arch: str = ""

    def __init__(self, seq_len: int, horizon: int):
        self.seq_len = seq_len
        self.horizon = horizon

    @property
    def backbone_shapes(self) -> typing.List[Shape]:
        raise NotImplementedError

    @property
    def head_layers(self) -> typing.List[typing.Tuple[int, int]]:
        raise NotImplementedError

    @property
    def head_shapes(self) -> typing.List[Shape]:
        shapes = []
        for out, inp in self.head_layers:
            shapes.extend([(out, inp), (out,)])
        return shapes

    @property
    def meta(self) -> typing.Dict[str, int]:
        return {"seq_len": self.seq_len, "horizon": self.horizon}

    def init_weights(self, rng: np.random.Generator) -> ModelWeights:
        """
        Draw initial weights

        Parameters
        ----------
        rng: numpy.random.Generator
            Numpy random generator.
        """
        raise NotImplementedError

    def backbone(
        self, weights: ModelWeights, X: np.ndarray, keep_cache: bool = False
    ) -> typing.Tuple[np.ndarray, typing.Any]:
        """
        Map input windows ``(n, L)`` to head features ``(n, d)``

        Returns the features and, when ``keep_cache`` is set, the values
        needed by :py:meth:`backbone_backward`.
        """
        raise NotImplementedError

    def backbone_backward(
        self, weights: ModelWeights, cache: typing.Any, dZ: np.ndarray
    ) -> np.ndarray:
        """Gradient of the backbone parameters given the feature gradient"""
        raise NotImplementedError

    def head_forward(
        self, head: np.ndarray, Z: np.ndarray
    ) -> typing.Tuple[np.ndarray, typing.Any]:
        """Map features to forecasts ``(n, H)``, returning a cache"""
        raise NotImplementedError

    def head_backward(
        self, head: np.ndarray, cache: typing.Any, dpred: np.ndarray
    ) -> typing.Tuple[LayerTerms, np.ndarray]:
        """
        Back-propagate a forecast gradient through the head

        Returns
        -------
        tuple
            Per-layer ``(delta, input)`` pairs, in ``head_layers`` order,
            and the gradient with respect to the features.
        """
        raise NotImplementedError

    def forward(self, weights: ModelWeights, X: np.ndarray) -> np.ndarray:
        """Forecast from scaled input windows ``(n, L)``"""
        Z, _ = self.backbone(weights, np.atleast_2d(X))
        pred, _ = self.head_forward(weights.head, Z)
        return pred

    def embed(self, weights: ModelWeights, X: np.ndarray) -> np.ndarray:
        """Backbone features of input windows, used as embeddings"""
        Z, _ = self.backbone(weights, np.atleast_2d(X))
        return Z

    @staticmethod
    def gradient_from_terms(terms: LayerTerms) -> np.ndarray:
        """Flat head gradient from per-layer ``(delta, input)`` pairs"""
        parts = []
        for delta, inp in terms:
            parts.append((delta.T @ inp).ravel())
            parts.append(delta.sum(axis=0))
        return np.concatenate(parts)

    @staticmethod
    def squared_gradient_from_terms(terms: LayerTerms) -> np.ndarray:
        """
        Sum over windows of squared per-window head gradients

        Each window's gradient of an affine layer is the outer product of
        its delta and input, so the squares sum as
        ``(delta ** 2).T @ (input ** 2)``.
        """
        parts = []
        for delta, inp in terms:
            d2 = delta**2
            parts.append((d2.T @ inp**2).ravel())
            parts.append(d2.sum(axis=0))
        return np.concatenate(parts)

    def init_head_layers(self, rng: np.random.Generator) -> np.ndarray:
        parts = []
        for out, inp in self.head_layers:
            bound = 1.0 / np.sqrt(inp)
            parts.append(rng.uniform(-bound, bound, size=out * inp))
            parts.append(rng.uniform(-bound, bound, size=out))
        return np.concatenate(parts)


@dataclasses.dataclass
class LiveModel:
    """
    Deployed forecaster: architecture, weights and active scaler

    Attributes
    ----------
    forecaster: BaseForecaster
        Architecture implementation.
    weights: ModelWeights
        Current weights.
    scaler: ScalerState
        Scaler the weights currently expect.
    """

    forecaster: BaseForecaster
    weights: ModelWeights
    scaler: ScalerState

    def predict(self, raw_input: np.ndarray) -> np.ndarray:
        """
        Forecast in the original scale

        Parameters
        ----------
        raw_input: numpy.ndarray
            Raw input window(s) of length ``L``.

        Returns
        -------
        numpy.ndarray
            Raw-scale forecast(s) of length ``H``.
        """
        raw_input = np.asarray(raw_input, dtype=np.float64)
        pred = self.forecaster.forward(self.weights, self.scaler.transform(raw_input))
        pred = self.scaler.inverse_transform(pred)
        return pred[0] if raw_input.ndim == 1 else pred
