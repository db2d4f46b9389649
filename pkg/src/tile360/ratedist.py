"""Tile rate-distortion model, spherical area weights, and WS-PSNR.

Distortion per tile follows D(R) = sigma/(R - r0) + d0 with parameters
fitted from trial-encoding samples.  Tiles are weighted by their area
on the unit sphere, so a weighted-mean MSE converts directly to the
spherically weighted PSNR used for reporting.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .visibility import tile_bounds


@dataclass(frozen=True)
class RateLadder:
    """Strictly increasing encoding rates, kbps."""

    rates: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if len(rates) < 2:
            raise ValueError("ladder needs at least 2 rates")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("ladder rates must be strictly increasing")
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return len(self.rates)

    def rate(self, index):
        """Rate at a 1-based ladder index."""
        if not 1 <= index <= len(self.rates):
            raise ValueError(f"ladder index {index} outside [1, {len(self.rates)}]")
        return self.rates[index - 1]

    def floor_index(self, rate):
        """Largest 1-based index whose rate is <= the given rate."""
        if rate < self.rates[0]:
            raise ValueError(f"rate {rate} below the lowest ladder rate")
        idx = int(np.searchsorted(self.rates, rate, side="right"))
        return idx


# Default per-tile encoding ladder (kbps) used by the bundled experiments.
DEFAULT_LADDER = RateLadder((2.0, 4.0, 10.0, 20.0, 49.0, 120.0))


@dataclass(frozen=True)
class RdParams:
    """Parameters of D(R) = sigma/(R - r0) + d0."""

    sigma: float
    r0: float
    d0: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")
        if not self.d0 >= 0.0:
            raise ValueError("d0 must be non-negative")


@dataclass(frozen=True)
class TileWeightMap:
    """Per-tile spherical areas S_{m,n} on the unit sphere (steradians)."""

    grid: object
    areas: np.ndarray = field(repr=False)

    def area(self, m, n):
        return float(self.areas[m - 1, n - 1])

    @property
    def total(self):
        return float(self.areas.sum())


def tile_area(m, n, grid):
    """Spherical area of tile (m, n): (2*pi/N)*(sin lat_up - sin lat_lo)."""
    bounds = tile_bounds(m, n, grid)
    return (
        2.0
        * math.pi
        / grid.cols
        * (math.sin(math.radians(bounds.lat_upper)) - math.sin(math.radians(bounds.lat_lower)))
    )


def tile_weight_map(grid):
    """Area weights for every tile of the grid."""
    areas = np.empty((grid.rows, grid.cols))
    for m in range(1, grid.rows + 1):
        for n in range(1, grid.cols + 1):
            areas[m - 1, n - 1] = tile_area(m, n, grid)
    return TileWeightMap(grid=grid, areas=areas)


def distortion(params, rate):
    """Model distortion at a rate strictly above the pole r0."""
    if rate <= params.r0:
        raise ValueError(f"rate {rate} at or below the model pole r0={params.r0}")
    return params.sigma / (rate - params.r0) + params.d0


def _linear_subfit(rates, dists, r0):
    """Closed-form least squares of (sigma, d0) for a fixed r0."""
    u = 1.0 / (rates - r0)
    a = np.column_stack([u, np.ones_like(u)])
    (sigma, d0), *_ = np.linalg.lstsq(a, dists, rcond=None)
    resid = a @ np.array([sigma, d0]) - dists
    return sigma, d0, float(resid @ resid)


def fit_rd(samples):
    """Least-squares fit of (sigma, r0, d0) from (rate, distortion) samples.

    r0 is searched on a coarse grid strictly below the minimum sample
    rate (each candidate solved by the closed-form linear sub-fit of
    sigma and d0), then refined locally.  Repeated measurements at one
    rate are allowed; the monotonicity requirement applies to the
    per-rate mean distortions.  d0 is clamped at 0 and sigma must come
    out positive.
    """
    pts = sorted((float(r), float(d)) for r, d in samples)
    rates = np.array([p[0] for p in pts])
    dists = np.array([p[1] for p in pts])
    unique_rates, inverse = np.unique(rates, return_inverse=True)
    if unique_rates.size < 4:
        raise ValueError("fit_rd needs at least 4 samples with distinct rates")
    means = np.bincount(inverse, weights=dists) / np.bincount(inverse)
    if np.any(np.diff(means) >= 0.0):
        raise ValueError("distortion must strictly decrease with rate")

    r_min = rates[0]
    span = rates[-1] - rates[0]
    lo = r_min - 2.0 * span
    hi = r_min - 1e-6 * max(span, 1.0)
    candidates = np.linspace(lo, hi, 201)
    sse = np.array([_linear_subfit(rates, dists, r0)[2] for r0 in candidates])
    best = int(np.argmin(sse))
    left = candidates[max(best - 1, 0)]
    right = candidates[min(best + 1, candidates.size - 1)]
    res = minimize_scalar(
        lambda r0: _linear_subfit(rates, dists, r0)[2],
        bounds=(left, right),
        method="bounded",
        options={"xatol": 1e-10},
    )
    r0 = float(res.x)
    sigma, d0, _ = _linear_subfit(rates, dists, r0)
    if sigma <= 0.0:
        raise ValueError("fit produced a non-positive sigma")
    return RdParams(sigma=float(sigma), r0=r0, d0=float(max(d0, 0.0)))


def spherical_mse_to_wspsnr(weighted_mse):
    """10*log10(255^2 / mse); requires a positive weighted MSE."""
    if weighted_mse <= 0.0:
        raise ValueError("weighted MSE must be positive")
    return 10.0 * math.log10(255.0**2 / weighted_mse)


def read_rd_samples_csv(path):
    """R-D sample CSV with a `rate_kbps,mse` header line."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [(float(r), float(d)) for r, d in data]


def write_rd_params_json(params):
    """JSON-ready dict for a fitted parameter set."""
    return {"sigma": params.sigma, "r0": params.r0, "d0": params.d0}
