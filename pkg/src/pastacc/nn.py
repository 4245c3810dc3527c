"""Minimal feedforward classifier in float64 numpy.

Parameters of a layer are held as one augmented matrix of shape
``(fan_out, fan_in + 1)`` whose last column is the bias.  Raveling these
matrices row-major and concatenating them layer by layer gives the canonical
flat layout: neurons in layer order, each contributing its incoming weights
(input-index order) followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DomainError,
    EmptyInputError,
    InputShapeError,
    LayoutError,
    NumericOverflowError,
)

PROB_FLOOR = 1e-12
# Rows per block when streaming large evaluation sets through the network.
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat parameter-space vector tagged with the layer dims it belongs to."""

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise LayoutError("parameter vector must be one-dimensional")
        expected = param_count(self.layout)
        if values.size != expected:
            raise LayoutError(
                f"vector has {values.size} entries, layout {self.layout} needs {expected}"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(int(d) for d in self.layout))

    def __len__(self):
        return self.values.size

    def _check(self, other: "ParamVector"):
        if not isinstance(other, ParamVector):
            raise LayoutError("can only combine with another ParamVector")
        if other.layout != self.layout:
            raise LayoutError(f"layout mismatch: {self.layout} vs {other.layout}")

    def __add__(self, other):
        self._check(other)
        return ParamVector(self.values + other.values, self.layout)

    def __sub__(self, other):
        self._check(other)
        return ParamVector(self.values - other.values, self.layout)

    def __neg__(self):
        return ParamVector(-self.values, self.layout)

    def scale(self, alpha: float) -> "ParamVector":
        return ParamVector(alpha * self.values, self.layout)

    def dot(self, other: "ParamVector") -> float:
        self._check(other)
        return float(np.dot(self.values, other.values))

    @classmethod
    def zeros(cls, layout) -> "ParamVector":
        return cls(np.zeros(param_count(layout)), layout)


def param_count(layer_dims: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def _validate_dims(layer_dims) -> tuple:
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise DomainError("layer_dims needs at least an input and an output size")
    if any(d < 1 for d in dims):
        raise DomainError(f"layer sizes must be positive, got {dims}")
    if dims[-1] < 2:
        raise DomainError("a classifier needs at least two classes")
    return dims


class MlpNetwork:
    """Fully connected network, rectifier hidden layers, softmax output.

    Instances are treated as immutable: the augmented layer matrices are
    marked read-only, and training returns a new network.
    """

    def __init__(self, layer_dims: Sequence[int], layers: Sequence[np.ndarray]):
        dims = _validate_dims(layer_dims)
        if len(layers) != len(dims) - 1:
            raise LayoutError(f"expected {len(dims) - 1} layers, got {len(layers)}")
        mats = []
        for i, mat in enumerate(layers):
            mat = np.array(mat, dtype=np.float64)
            if mat.shape != (dims[i + 1], dims[i] + 1):
                raise LayoutError(
                    f"layer {i} has shape {mat.shape}, expected {(dims[i + 1], dims[i] + 1)}"
                )
            if not np.all(np.isfinite(mat)):
                raise NumericOverflowError(f"layer {i} holds non-finite parameters")
            mat.flags.writeable = False
            mats.append(mat)
        self.layer_dims = dims
        self.layers = tuple(mats)

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    @classmethod
    def from_vector(cls, layer_dims, vector) -> "MlpNetwork":
        dims = _validate_dims(layer_dims)
        if isinstance(vector, ParamVector):
            if vector.layout != dims:
                raise LayoutError(f"layout mismatch: {vector.layout} vs {dims}")
            values = vector.values
        else:
            values = np.asarray(vector, dtype=np.float64)
        if values.shape != (param_count(dims),):
            raise LayoutError(f"expected {param_count(dims)} parameters, got {values.shape}")
        layers, pos = [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            size = (fan_in + 1) * fan_out
            layers.append(values[pos:pos + size].reshape(fan_out, fan_in + 1))
            pos += size
        return cls(dims, layers)

    def __repr__(self):
        return f"MlpNetwork(layer_dims={self.layer_dims})"


@dataclass(frozen=True, eq=False)
class Prediction:
    probs: np.ndarray
    fst: int
    snd: int

    @classmethod
    def from_probs(cls, probs) -> "Prediction":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size < 2:
            raise InputShapeError("probability vector needs at least two entries")
        fst, snd = top_two(probs[None, :])
        return cls(probs, int(fst[0]), int(snd[0]))


def top_two(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise largest and second-largest class, ties to the lowest index."""
    order = np.argsort(-probs, axis=1, kind="stable")
    return order[:, 0], order[:, 1]


def _as_batch(net: MlpNetwork, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise InputShapeError(
            f"input has shape {x.shape}, network expects {net.layer_dims[0]} features"
        )
    if not np.all(np.isfinite(x)):
        raise InputShapeError("input contains non-finite values")
    return x


def _forward_cached(layers, x: np.ndarray):
    """Return (layer inputs, softmax probabilities) for a 2-D batch."""
    acts = [x]
    h = x
    last = len(layers) - 1
    with np.errstate(over="ignore", invalid="ignore"):
        for i, mat in enumerate(layers):
            z = h @ mat[:, :-1].T + mat[:, -1]
            if i < last:
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
    if not np.all(np.isfinite(h)):
        raise NumericOverflowError("non-finite logits in forward pass")
    h = h - h.max(axis=1, keepdims=True)
    e = np.exp(h)
    probs = e / e.sum(axis=1, keepdims=True)
    return acts, probs


def predict_proba(net: MlpNetwork, x) -> np.ndarray:
    """Softmax outputs for a batch (n, c); streams in chunks of CHUNK rows."""
    x = _as_batch(net, x)
    if len(x) <= CHUNK:
        return _forward_cached(net.layers, x)[1]
    return np.concatenate(
        [_forward_cached(net.layers, x[i:i + CHUNK])[1] for i in range(0, len(x), CHUNK)]
    )


def forward(net: MlpNetwork, x) -> Prediction:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputShapeError("forward takes a single feature vector")
    return Prediction.from_probs(predict_proba(net, x)[0])


def cross_entropy(pred: Prediction, k: int) -> float:
    c = pred.probs.size
    if not 0 <= k < c:
        raise DomainError(f"class id {k} outside [0, {c})")
    return float(-np.log(np.clip(pred.probs[k], PROB_FLOOR, 1.0)))


def backprop_sum(net: MlpNetwork, x, logit_grads) -> ParamVector:
    """Sum over rows of d(loss)/d(params), given d(loss)/d(logits) per row.

    ``logit_grads`` has shape (n, c).  Rows are processed in CHUNK blocks in
    order, so the result is reproducible for a given input order.
    """
    x = _as_batch(net, x)
    g = np.asarray(logit_grads, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (len(x), net.n_classes):
        raise InputShapeError(f"logit gradients have shape {g.shape}, expected {(len(x), net.n_classes)}")
    total = [np.zeros_like(m) for m in net.layers]
    for start in range(0, len(x), CHUNK):
        acts, _ = _forward_cached(net.layers, x[start:start + CHUNK])
        for i, part in enumerate(_backward(net.layers, acts, g[start:start + CHUNK])):
            total[i] += part
    return ParamVector(np.concatenate([t.ravel() for t in total]), net.layer_dims)


def _backward(layers, acts, delta):
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        a = acts[i]
        gw = delta.T @ a
        gb = delta.sum(axis=0)
        grads[i] = np.hstack([gw, gb[:, None]])
        if i > 0:
            # rectifier subgradient is 0 at 0: a > 0 exactly where z > 0
            delta = (delta @ layers[i][:, :-1]) * (a > 0)
    return grads


def grad_class_loss(net: MlpNetwork, x, k: int) -> ParamVector:
    """Gradient of -ln(probs[k]) with respect to every parameter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputShapeError("grad_class_loss takes a single feature vector")
    if not 0 <= k < net.n_classes:
        raise DomainError(f"class id {k} outside [0, {net.n_classes})")
    xb = _as_batch(net, x)
    acts, probs = _forward_cached(net.layers, xb)
    g = probs.copy()
    g[0, k] -= 1.0
    grads = _backward(net.layers, acts, g)
    return ParamVector(np.concatenate([m.ravel() for m in grads]), net.layer_dims)


def flatten_params(net: MlpNetwork) -> ParamVector:
    return ParamVector(np.concatenate([m.ravel() for m in net.layers]), net.layer_dims)


def unflatten_params(vector: ParamVector) -> MlpNetwork:
    return MlpNetwork.from_vector(vector.layout, vector)


def param_delta(before: ParamVector, after: ParamVector) -> ParamVector:
    """``after - before``, i.e. the update applied to go from one to the other."""
    return after - before


def correct_mask(net: MlpNetwork, features, labels) -> np.ndarray:
    probs = predict_proba(net, features)
    return top_two(probs)[0] == np.asarray(labels)


def accuracy(net: MlpNetwork, dataset) -> float:
    """Fraction of ``dataset`` (anything with ``features``/``labels``) classified correctly."""
    labels = np.asarray(dataset.labels)
    if labels.size == 0:
        raise EmptyInputError("accuracy of an empty dataset is undefined")
    return float(np.count_nonzero(correct_mask(net, dataset.features, labels)) / labels.size)


def mean_loss_and_grads(layers, x, labels):
    """Mean cross-entropy over a batch and its gradient as per-layer matrices.

    Works on bare augmented layer matrices so the trainer can update them in
    place without rebuilding a network per step.
    """
    acts, probs = _forward_cached(layers, x)
    n = len(x)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.clip(picked, PROB_FLOOR, 1.0))))
    g = probs.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, _backward(layers, acts, g / n)
