"""Monte Carlo result container and order-independent merging.

Estimators shard replicates across worker streams; each worker reports
exact per-worker aggregates (count, sum, sum of squares, min, max) which
are merged with exactly rounded summation (math.fsum), so the final result
is bit-identical for a given (seed, worker count) regardless of execution
order.  Certified censoring biases are carried in ``error_budget`` and are
never folded into the statistical standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n: int
    method: str
    seed: int
    error_budget: float = 0.0
    flags: tuple[str, ...] = ()
    extras: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0.0 or self.error_budget < 0.0:
            raise ValueError("std_error and error_budget must be non-negative")


@dataclass(frozen=True)
class Tally:
    """Exact per-worker aggregates of one scalar sample batch."""

    n: int
    total: float
    total_sq: float
    minimum: float
    maximum: float

    @staticmethod
    def of(samples: np.ndarray) -> "Tally":
        xs = np.asarray(samples, dtype=np.float64)
        if xs.size == 0:
            return Tally(0, 0.0, 0.0, math.inf, -math.inf)
        return Tally(
            n=int(xs.size),
            total=math.fsum(xs.tolist()),
            total_sq=math.fsum((xs * xs).tolist()),
            minimum=float(xs.min()),
            maximum=float(xs.max()),
        )


def merge_mean(tallies: list[Tally]) -> tuple[int, float, float, float, float]:
    """(n, mean, std_error, min, max) from per-worker tallies.

    All-identical samples yield std_error exactly 0 (their sample variance
    is zero by definition, independent of rounding in the aggregates).
    """
    n = sum(t.n for t in tallies)
    if n == 0:
        raise ValueError("cannot merge empty tallies")
    s = math.fsum(t.total for t in tallies)
    q = math.fsum(t.total_sq for t in tallies)
    mn = min(t.minimum for t in tallies)
    mx = max(t.maximum for t in tallies)
    mean = s / n
    if n == 1 or mx == mn:
        return n, mean, 0.0, mn, mx
    var = max(0.0, (q - s * s / n) / (n - 1))
    return n, mean, math.sqrt(var / n), mn, mx


@dataclass(frozen=True)
class PairTally:
    """Exact aggregates of paired samples (x, y) for ratio estimators."""

    n: int
    sum_x: float
    sum_y: float
    sum_xx: float
    sum_yy: float
    sum_xy: float

    @staticmethod
    def of(xs: np.ndarray, ys: np.ndarray) -> "PairTally":
        x = np.asarray(xs, dtype=np.float64)
        y = np.asarray(ys, dtype=np.float64)
        return PairTally(
            n=int(x.size),
            sum_x=math.fsum(x.tolist()),
            sum_y=math.fsum(y.tolist()),
            sum_xx=math.fsum((x * x).tolist()),
            sum_yy=math.fsum((y * y).tolist()),
            sum_xy=math.fsum((x * y).tolist()),
        )


def merge_ratio(tallies: list[PairTally]) -> tuple[int, float, float]:
    """Ratio-of-means mean(y)/mean(x) with delta-method standard error.

    The numerator and denominator share samples, so the covariance term is
    kept: Var(r) ~ (S_yy - 2 r S_xy + r^2 S_xx) / (n xbar^2).
    """
    n = sum(t.n for t in tallies)
    if n == 0:
        raise ValueError("cannot merge empty tallies")
    sx = math.fsum(t.sum_x for t in tallies)
    sy = math.fsum(t.sum_y for t in tallies)
    sxx = math.fsum(t.sum_xx for t in tallies)
    syy = math.fsum(t.sum_yy for t in tallies)
    sxy = math.fsum(t.sum_xy for t in tallies)
    xbar = sx / n
    ybar = sy / n
    ratio = ybar / xbar
    if n == 1:
        return n, ratio, 0.0
    var_y = max(0.0, (syy - sy * sy / n) / (n - 1))
    var_x = max(0.0, (sxx - sx * sx / n) / (n - 1))
    cov = (sxy - sx * sy / n) / (n - 1)
    var_r = max(0.0, var_y - 2.0 * ratio * cov + ratio * ratio * var_x)
    return n, ratio, math.sqrt(var_r / n) / abs(xbar)
