"""Scalar Gaussian probability primitives shared by every solver layer.

All distribution parameters in this package store the second moment as a
VARIANCE (not a standard deviation). File formats and reports repeat this
convention explicitly wherever a Gaussian is serialized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "GaussianScalar",
    "std_normal_cdf",
    "std_normal_quantile",
    "interval_probability",
    "exceed_probability",
]


@dataclass(frozen=True)
class GaussianScalar:
    """A scalar Gaussian (mean, variance). Variance must be >= 0."""

    mean: float
    variance: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise ValueError(f"non-finite mean {self.mean!r}")
        if not (self.variance >= 0.0):
            raise ValueError(f"negative or NaN variance {self.variance!r}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def scaled(self, factor: float) -> "GaussianScalar":
        """Distribution of factor * X (variance scales quadratically)."""
        return GaussianScalar(factor * self.mean, factor * factor * self.variance)

    def __add__(self, other: "GaussianScalar") -> "GaussianScalar":
        """Sum of independent Gaussians."""
        return GaussianScalar(self.mean + other.mean, self.variance + other.variance)


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF. Total on finite reals; accepts +/-inf too."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def std_normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, by bisection.

    Robust rather than clever: ~120 halvings of [-40, 40] pin the root far
    below the 1e-10 round-trip contract. Raises ValueError outside (0, 1).
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"quantile requires 0 < p < 1, got {p!r}")
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        c = std_normal_cdf(mid)
        if c == p:
            return mid
        if c < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * max(1.0, abs(lo)):
            break
    return 0.5 * (lo + hi)


def interval_probability(lo: float, hi: float, g: GaussianScalar) -> float:
    """P(lo < X <= hi) for X ~ g. lo may be -inf, hi may be +inf.

    For a degenerate (zero-variance) g the point mass at the mean counts
    exactly when lo < mean <= hi, i.e. the half-open limit of F(hi) - F(lo).
    """
    if lo > hi:
        raise ValueError(f"empty interval: lo={lo!r} > hi={hi!r}")
    if g.variance == 0.0:
        return 1.0 if lo < g.mean <= hi else 0.0
    s = g.std
    p = std_normal_cdf((hi - g.mean) / s) - std_normal_cdf((lo - g.mean) / s)
    return min(1.0, max(0.0, p))


def exceed_probability(threshold: float, g: GaussianScalar) -> float:
    """P(X > threshold); degenerate case is the strict indicator [mean > t].

    The strict convention matches the rollout rule "fails when cumulative
    cost first exceeds the budget", so zero-variance instances agree exactly
    between the analytic recourse and the Monte Carlo validator.
    """
    if g.variance == 0.0:
        return 1.0 if g.mean > threshold else 0.0
    return 1.0 - std_normal_cdf((threshold - g.mean) / g.std)
