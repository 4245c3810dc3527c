"""Positive/negative losses, their gradients, and the cached GradSum vector.

Before an update the evaluation samples of a class are split by whether the
current network classifies them correctly.  Misclassified samples contribute
the positive loss ``L(y, t) - L(y, fst)``, correctly classified ones the
negative loss ``L(y, snd) - L(y, t)``.  The gradients of both are summed into
one parameter-space vector, so that once the update ``delta`` is known the
effect score is a single dot product whose cost does not depend on how many
samples went into the sum.

The classes ``fst``/``snd`` are read off the pre-update forward pass and held
fixed when differentiating.  Under softmax + cross-entropy the logit
sensitivity of ``L(y, a) - L(y, b)`` is then ``onehot(b) - onehot(a)``, which
is what the batched paths below feed to the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CacheConsistencyError, DomainError, EmptyClassError, LayoutError
from .nn import (
    MlpNetwork,
    ParamVector,
    Prediction,
    backprop_sum,
    cross_entropy,
    forward,
    grad_class_loss,
    predict_proba,
    top_two,
)


@dataclass(frozen=True, eq=False)
class ClassPartition:
    k: int
    failed: np.ndarray
    succeeded: np.ndarray
    round: Optional[int] = None


@dataclass(frozen=True, eq=False)
class GradSumRecord:
    """GradSum of one class under one checkpoint.

    ``batch_size`` is ``None`` for the per-sample path and the mini-batch size
    otherwise.
    """

    round: int
    k: int
    vector: ParamVector
    sample_count: int
    failed_count: int
    succeeded_count: int
    batch_size: Optional[int] = None

    def __post_init__(self):
        if self.failed_count + self.succeeded_count != self.sample_count:
            raise CacheConsistencyError("failed + succeeded counts must equal sample count")

    @property
    def path(self) -> str:
        return "per-sample" if self.batch_size is None else f"mini-batch({self.batch_size})"

    @classmethod
    def empty(cls, round, k, layout, batch_size=None) -> "GradSumRecord":
        return cls(round, k, ParamVector.zeros(layout), 0, 0, 0, batch_size)


def _class_rows(eval_set, k):
    rows = np.flatnonzero(eval_set.labels == k)
    return rows[np.argsort(eval_set.ids[rows], kind="stable")]


def _check_class(net, k):
    if not 0 <= k < net.n_classes:
        raise DomainError(f"class id {k} outside [0, {net.n_classes})")


def partition(net: MlpNetwork, eval_set, k: int, round: Optional[int] = None) -> ClassPartition:
    """Split the class-``k`` samples of ``eval_set`` into failed/succeeded under ``net``."""
    _check_class(net, k)
    rows = _class_rows(eval_set, k)
    if rows.size == 0:
        raise EmptyClassError(f"no samples of class {k}")
    fst, _ = top_two(predict_proba(net, eval_set.features[rows]))
    ok = fst == k
    ids = eval_set.ids[rows]
    return ClassPartition(k, ids[~ok], ids[ok], round)


def positive_loss(pred: Prediction, t: int) -> float:
    return cross_entropy(pred, t) - cross_entropy(pred, pred.fst)


def negative_loss(pred: Prediction, t: int) -> float:
    return cross_entropy(pred, pred.snd) - cross_entropy(pred, t)


def grad_positive_loss(net: MlpNetwork, x, t: int) -> ParamVector:
    pred = forward(net, x)
    return grad_class_loss(net, x, t) - grad_class_loss(net, x, pred.fst)


def grad_negative_loss(net: MlpNetwork, x, t: int) -> ParamVector:
    pred = forward(net, x)
    return grad_class_loss(net, x, pred.snd) - grad_class_loss(net, x, t)


def positive_effect(net: MlpNetwork, x, t: int, delta: ParamVector) -> float:
    """First-order decrease of the positive loss under ``delta`` (PI)."""
    return -grad_positive_loss(net, x, t).dot(delta)


def negative_effect(net: MlpNetwork, x, t: int, delta: ParamVector) -> float:
    """First-order decrease of the negative loss under ``delta`` (NI)."""
    return -grad_negative_loss(net, x, t).dot(delta)


def effect_per_sample(net: MlpNetwork, eval_set, k: int, delta: ParamVector) -> float:
    """Sum of PI over failed samples minus sum of NI over succeeded ones.

    Cost grows with the class size; kept as the reference for ``effect``.
    """
    part = partition(net, eval_set, k)
    rows = eval_set.rows
    total_pi = sum(positive_effect(net, eval_set.features[r], k, delta) for r in rows(part.failed))
    total_ni = sum(negative_effect(net, eval_set.features[r], k, delta) for r in rows(part.succeeded))
    return total_pi - total_ni


def _logit_terms(probs, k):
    """Per-row logit sensitivity of the GradSum summand and the success mask."""
    fst, snd = top_two(probs)
    ok = fst == k
    g = np.zeros_like(probs)
    g[:, k] = 1.0
    other = np.where(ok, snd, fst)
    g[np.arange(len(g)), other] -= 1.0
    return g, ok


def grad_sum(net: MlpNetwork, eval_set, k: int, round: int = 0) -> GradSumRecord:
    """GradSum over the class-``k`` samples of ``eval_set`` under ``net``.

    Equals ``sum_F(-grad PL) - sum_T(-grad NL)``; computed with one batched
    backward pass, rows in ascending sample-id order.
    """
    _check_class(net, k)
    rows = _class_rows(eval_set, k)
    if rows.size == 0:
        raise EmptyClassError(f"no samples of class {k}")
    x = eval_set.features[rows]
    g, ok = _logit_terms(predict_proba(net, x), k)
    vec = backprop_sum(net, x, g)
    n_ok = int(np.count_nonzero(ok))
    return GradSumRecord(round, k, vec, rows.size, rows.size - n_ok, n_ok)


def grad_sum_minibatch(net: MlpNetwork, eval_set, k: int, batch_size: int,
                       round: int = 0) -> GradSumRecord:
    """GradSum built from mini-batch mean losses, each scaled by its batch size.

    Failed and succeeded samples are chunked separately, in ascending id
    order, into batches of at most ``batch_size``.
    """
    if batch_size < 1:
        raise DomainError("batch_size must be at least 1")
    _check_class(net, k)
    rows = _class_rows(eval_set, k)
    if rows.size == 0:
        raise EmptyClassError(f"no samples of class {k}")
    x = eval_set.features[rows]
    probs = predict_proba(net, x)
    fst, snd = top_two(probs)
    ok = fst == k
    total = ParamVector.zeros(net.layer_dims)
    n = probs.shape[1]
    # failed samples add -grad PL, succeeded samples add +grad NL; both have
    # logit sensitivity onehot(t) - onehot(other), other = fst resp. snd
    for group, other in ((~ok, fst), (ok, snd)):
        idx = np.flatnonzero(group)
        for start in range(0, idx.size, batch_size):
            b = idx[start:start + batch_size]
            g = np.zeros((b.size, n))
            g[:, k] += 1.0
            g[np.arange(b.size), other[b]] -= 1.0
            mean_grad = backprop_sum(net, x[b], g / b.size)
            total = total + mean_grad.scale(float(b.size))
    n_ok = int(np.count_nonzero(ok))
    return GradSumRecord(round, k, total, rows.size, rows.size - n_ok, n_ok, batch_size)


def effect(gs: GradSumRecord, delta: ParamVector) -> float:
    """Effect score of an update: GradSum . delta.  Cost is O(#params)."""
    return gs.vector.dot(delta)


def merge_gradsum(a: GradSumRecord, b: GradSumRecord) -> GradSumRecord:
    """Combine records for disjoint sample sets computed under the same checkpoint."""
    if (a.round, a.k, a.batch_size) != (b.round, b.k, b.batch_size):
        raise CacheConsistencyError(
            f"cannot merge round/class/path {(a.round, a.k, a.path)} with {(b.round, b.k, b.path)}"
        )
    try:
        vec = a.vector + b.vector
    except LayoutError as exc:
        raise CacheConsistencyError(str(exc)) from exc
    return GradSumRecord(
        a.round, a.k, vec,
        a.sample_count + b.sample_count,
        a.failed_count + b.failed_count,
        a.succeeded_count + b.succeeded_count,
        a.batch_size,
    )


def compute_gradsum(net, eval_set, k, round=0, batch_size=None) -> GradSumRecord:
    """Dispatch on path: per-sample when ``batch_size`` is None, else mini-batch."""
    if batch_size is None:
        return grad_sum(net, eval_set, k, round)
    return grad_sum_minibatch(net, eval_set, k, batch_size, round)
