"""Per-class calibration of effect scores against measured accuracy change."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .errors import DegenerateRegressorError, EmptyInputError, InsufficientDataError

FENCE_FACTOR = 1.5
MIN_SAMPLES = 2


class EfSample(NamedTuple):
    round: int
    k: int
    ef: float
    acc_delta: float


@dataclass(frozen=True)
class RegressionModel:
    slope: float
    intercept: float
    r2: float
    n_used: int
    n_removed: int = 0
    k: Optional[int] = None
    round: Optional[int] = None


def quantile(values: Sequence[float], p: float) -> float:
    """Linear interpolation at rank ``(n - 1) * p`` of an ascending sequence."""
    n = len(values)
    if n == 0:
        raise EmptyInputError("quantile of an empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    h = (n - 1) * p
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return float(values[lo])
    return float(values[lo] + (h - lo) * (values[hi] - values[lo]))


def fences(values: Sequence[float]) -> tuple[float, float]:
    ordered = sorted(values)
    q1 = quantile(ordered, 0.25)
    q3 = quantile(ordered, 0.75)
    iqr = q3 - q1
    return q1 - FENCE_FACTOR * iqr, q3 + FENCE_FACTOR * iqr


def filter_outliers(samples):
    """Split samples into (kept, removed) by Tukey fences on both coordinates.

    A sample is removed when its ef or its acc_delta lies strictly outside the
    fences computed over all given samples.  Input order is preserved.
    """
    samples = list(samples)
    if not samples:
        return [], []
    ef_lo, ef_hi = fences([s.ef for s in samples])
    acc_lo, acc_hi = fences([s.acc_delta for s in samples])
    kept, removed = [], []
    for s in samples:
        out = s.ef < ef_lo or s.ef > ef_hi or s.acc_delta < acc_lo or s.acc_delta > acc_hi
        (removed if out else kept).append(s)
    return kept, removed


def fit(samples, k=None, round=None, n_removed=0) -> RegressionModel:
    """Ordinary least squares of acc_delta on ef (with intercept), R^2 on the same points."""
    # sorted so the floating-point sums do not depend on input order
    pts = sorted((float(s.ef), float(s.acc_delta)) for s in samples)
    n = len(pts)
    if n < MIN_SAMPLES:
        raise InsufficientDataError(f"insufficient samples: need at least {MIN_SAMPLES}, have {n}")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    if xs[0] == xs[-1]:
        raise DegenerateRegressorError("all ef values are identical")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    sxy = math.fsum((x - mx) * (y - my) for x, y in pts)
    if sxx == 0.0:
        raise DegenerateRegressorError("ef variance underflows to zero")
    slope = sxy / sxx
    intercept = my - slope * mx
    ss_res = math.fsum((y - (slope * x + intercept)) ** 2 for x, y in pts)
    ss_tot = math.fsum((y - my) ** 2 for y in ys)
    if ss_tot == 0.0:
        # constant response is fitted exactly by the zero-slope line
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    if not (math.isfinite(slope) and math.isfinite(intercept)):
        raise DegenerateRegressorError("regression coefficients are not finite")
    return RegressionModel(slope, intercept, r2, n, n_removed, k, round)


def calibrate(samples, k=None, round=None) -> RegressionModel:
    """Outlier filtering followed by ``fit`` on the kept samples."""
    kept, removed = filter_outliers(samples)
    return fit(kept, k=k, round=round, n_removed=len(removed))


def predict(model: RegressionModel, ef: float) -> float:
    return model.slope * ef + model.intercept


def pearson(xs, ys) -> float:
    """Pearson correlation; nan when either side has zero variance."""
    n = len(xs)
    if n < 2:
        return math.nan
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    sxy = math.fsum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = math.fsum((x - mx) ** 2 for x in xs)
    syy = math.fsum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return sxy / math.sqrt(sxx * syy)
