"""Deterministic mini-batch SGD producing the checkpoint sequence N_0..N_S."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DivergenceError, EmptyInputError, InputShapeError, NumericOverflowError
from .nn import MlpNetwork, ParamVector, flatten_params, mean_loss_and_grads
from .rng import stream

INIT_ROUND = -1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs_per_round: int
    seed: int

    def __post_init__(self):
        # a zero learning rate is accepted so a round can be a no-op
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs_per_round < 1:
            raise ConfigurationError("batch_size and epochs_per_round must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in an unsigned 64-bit integer")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Checkpoint:
    round: int
    network: MlpNetwork
    config_hash: str
    parent_round: Optional[int]


def init_network(layer_dims, seed: int) -> MlpNetwork:
    """Glorot-uniform weights, zero biases, drawn from ``stream(seed, -1, 'init')``."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] < 2:
        raise ConfigurationError(f"degenerate layer dims {dims}")
    gen = stream(seed, INIT_ROUND, purpose="init")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = gen.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(np.hstack([w, np.zeros((fan_out, 1))]))
    return MlpNetwork(dims, layers)


def consistent_delta(before: np.ndarray, after: np.ndarray):
    """Return (after', delta) with ``before + delta == after'`` and ``after' - before == delta`` bitwise.

    ``after'`` differs from ``after`` by at most a rounding step on the rare
    coordinates where ``after - before`` is inexact.
    """
    cur = after
    for _ in range(8):
        delta = cur - before
        nxt = before + delta
        if np.array_equal(nxt, cur):
            return cur, delta
        cur = nxt
    raise DivergenceError("could not obtain a bit-consistent parameter delta")


def train_round(net: MlpNetwork, data, cfg: TrainConfig, round_index: int = 0):
    """Run ``epochs_per_round`` epochs of shuffled mini-batch SGD on ``data``.

    Returns ``(new_net, delta)`` with ``delta = flatten(new_net) - flatten(net)``.
    """
    n = len(data.labels)
    if n == 0:
        raise EmptyInputError("training data is empty")
    if data.features.shape[1] != net.layer_dims[0]:
        raise InputShapeError(
            f"training features have {data.features.shape[1]} columns, network expects {net.layer_dims[0]}"
        )
    before = flatten_params(net)
    if cfg.learning_rate == 0:
        return net, ParamVector.zeros(net.layer_dims)
    layers = [m.copy() for m in net.layers]
    x_all = np.asarray(data.features, dtype=np.float64)
    y_all = np.asarray(data.labels)
    gen = stream(cfg.seed, round_index, purpose="shuffle")
    for epoch in range(cfg.epochs_per_round):
        order = gen.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, grads = mean_loss_and_grads(layers, x_all[idx], y_all[idx])
            except NumericOverflowError as exc:
                raise DivergenceError(f"round {round_index} epoch {epoch} batch {b}: {exc}") from exc
            if not np.isfinite(loss):
                raise DivergenceError(f"round {round_index} epoch {epoch} batch {b}: loss is {loss}")
            for mat, g in zip(layers, grads):
                mat -= cfg.learning_rate * g
    after = np.concatenate([m.ravel() for m in layers])
    if not np.all(np.isfinite(after)):
        raise DivergenceError(f"round {round_index}: parameters became non-finite")
    after, delta = consistent_delta(before.values, after)
    new_net = MlpNetwork.from_vector(net.layer_dims, after)
    return new_net, ParamVector(delta, net.layer_dims)


def mean_loss(net: MlpNetwork, data) -> float:
    loss, _ = mean_loss_and_grads(net.layers, np.asarray(data.features, dtype=np.float64),
                                  np.asarray(data.labels))
    return loss
