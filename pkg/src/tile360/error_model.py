"""Zero-centered Laplace model for viewpoint prediction errors.

Pitch and yaw prediction errors are modeled as independent zero-mean
Laplace distributions; the scale is fitted by maximum likelihood and
the Gaussian alternative is ruled out with the Jarque-Bera statistic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

# 95th percentile of chi-squared with 2 degrees of freedom.
JB_CRITICAL_5PCT = 5.991


@dataclass(frozen=True)
class LaplaceParams:
    """Scale of a zero-mean Laplace distribution, in degrees."""

    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0.0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")


@dataclass(frozen=True)
class ErrorSamples:
    """Signed prediction errors in degrees (yaw pre-wrapped to [-180, 180])."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("error samples must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("error samples must be finite")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


def _as_values(samples):
    if isinstance(samples, ErrorSamples):
        return samples.values
    return ErrorSamples(np.asarray(samples, dtype=float)).values


def fit_laplace(samples):
    """Maximum-likelihood scale of a zero-mean Laplace: mean absolute value."""
    values = _as_values(samples)
    if values.size < 2:
        raise ValueError("fit_laplace needs at least 2 samples")
    scale = float(np.mean(np.abs(values)))
    if scale == 0.0:
        raise ValueError("all-zero samples give a degenerate distribution")
    return LaplaceParams(scale=scale)


def laplace_cdf(params, x):
    """CDF of the zero-mean Laplace distribution."""
    if x < 0.0:
        return 0.5 * math.exp(x / params.scale)
    return 1.0 - 0.5 * math.exp(-x / params.scale)


def laplace_interval_probability(params, a, b):
    """P(a <= X <= b) for X Laplace(0, scale); requires a <= b."""
    if a > b:
        raise ValueError(f"interval limits inverted: [{a}, {b}]")
    p = laplace_cdf(params, b) - laplace_cdf(params, a)
    return min(max(p, 0.0), 1.0)


def jarque_bera(samples):
    """Jarque-Bera normality statistic and 5%-level rejection flag.

    JB = n/6 * (S^2 + K^2/4) with S the sample skewness and K the
    excess kurtosis; the Gaussian hypothesis is rejected when JB
    exceeds the chi-squared(2) 95th percentile.
    """
    values = _as_values(samples)
    n = values.size
    if n < 8:
        raise ValueError("jarque_bera needs at least 8 samples")
    centered = values - values.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise ValueError("zero-variance samples")
    skew = float(np.mean(centered**3)) / m2**1.5
    kurt_excess = float(np.mean(centered**4)) / m2**2 - 3.0
    stat = n / 6.0 * (skew**2 + kurt_excess**2 / 4.0)
    return stat, stat > JB_CRITICAL_5PCT


def sample_laplace(params, size, rng):
    """Inverse-CDF draws from the zero-mean Laplace distribution."""
    u = rng.random(size) - 0.5
    return -params.scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def read_error_csv(path):
    """Error-sample CSV: one signed degree value per line."""
    values = np.loadtxt(path, dtype=float, ndmin=1)
    return ErrorSamples(values)
