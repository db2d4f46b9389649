"""Probabilistic tile visibility under a Laplace viewpoint-error model.

Given the predicted viewport's bounding box, each tile's visibility
probability is the product of two independent Laplace interval
probabilities, one for the latitude offset and one for the (wrapped)
longitude offset.  Tiles outside the predicted viewport region are
classified as marginal when the probability clears a threshold and
invisible otherwise.
"""

from dataclasses import dataclass

from .error_model import laplace_interval_probability
from .geometry import TileSet, viewport_tile_region, wrap_longitude


@dataclass(frozen=True)
class TileBounds:
    """Equirectangular tile boundaries in degrees."""

    lat_upper: float
    lat_lower: float
    lon_left: float
    lon_right: float


@dataclass(frozen=True)
class TileVisibility:
    """Visibility probability of one tile, with its two factors."""

    p_total: float
    p_lat: float
    p_lon: float


@dataclass(frozen=True)
class TileClassification:
    """Partition of the grid into viewport, marginal, invisible tiles."""

    viewport_tiles: TileSet
    marginal_tiles: frozenset
    invisible_tiles: frozenset
    probabilities: dict
    threshold: float

    def probability(self, m, n):
        return self.probabilities[(m, n)]


def tile_bounds(m, n, grid):
    """Boundaries of tile (m, n) on the grid, rows/cols 1-based."""
    if not (1 <= m <= grid.rows and 1 <= n <= grid.cols):
        raise ValueError(f"tile ({m}, {n}) outside {grid.rows}x{grid.cols} grid")
    lat_step = 180.0 / grid.rows
    lon_step = 360.0 / grid.cols
    return TileBounds(
        lat_upper=90.0 - (m - 1) * lat_step,
        lat_lower=90.0 - m * lat_step,
        lon_left=-180.0 + (n - 1) * lon_step,
        lon_right=-180.0 + n * lon_step,
    )


def tile_visibility(tile, bounds, lat_err, lon_err):
    """Visibility probability of one tile given predicted bounds.

    The viewport is treated as rigidly translated by the prediction
    error.  The latitude factor integrates the Laplace density over
    [max(lat_lower - lat_north, -90), min(lat_upper - lat_south, 90)],
    empty intervals giving 0.  The longitude factor integrates over
    [wrap(lon_left - lon_east), wrap(lon_right - lon_west)]; when the
    wrapped limits invert, the admissible set is the wrap-around union
    [lower, 180] u [-180, upper] and both arcs are summed.  When tile
    width plus viewport span reaches the full circle every longitude
    error keeps the tile visible and the integral runs over the whole
    [-180, 180].
    """
    lat_lo = max(tile.lat_lower - bounds.lat_north, -90.0)
    lat_hi = min(tile.lat_upper - bounds.lat_south, 90.0)
    if lat_lo > lat_hi:
        p_lat = 0.0
    else:
        p_lat = laplace_interval_probability(lat_err, lat_lo, lat_hi)

    width = tile.lon_right - tile.lon_left
    if width + bounds.lon_span >= 360.0:
        p_lon = laplace_interval_probability(lon_err, -180.0, 180.0)
    else:
        lon_lo = wrap_longitude(tile.lon_left - bounds.lon_east)
        lon_hi = wrap_longitude(tile.lon_right - bounds.lon_west)
        if lon_lo <= lon_hi:
            p_lon = laplace_interval_probability(lon_err, lon_lo, lon_hi)
        else:
            p_lon = laplace_interval_probability(
                lon_err, lon_lo, 180.0
            ) + laplace_interval_probability(lon_err, -180.0, lon_hi)
    return TileVisibility(p_total=p_lat * p_lon, p_lat=p_lat, p_lon=p_lon)


def classify_tiles(grid, bounds, lat_err, lon_err, threshold):
    """Partition the grid into viewport, marginal and invisible tiles."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    viewport = viewport_tile_region(bounds, grid)
    in_viewport = viewport.members
    probabilities = {}
    marginal = set()
    invisible = set()
    for m in range(1, grid.rows + 1):
        for n in range(1, grid.cols + 1):
            vis = tile_visibility(tile_bounds(m, n, grid), bounds, lat_err, lon_err)
            probabilities[(m, n)] = vis
            if (m, n) in in_viewport:
                continue
            if vis.p_total >= threshold:
                marginal.add((m, n))
            else:
                invisible.add((m, n))
    return TileClassification(
        viewport_tiles=viewport,
        marginal_tiles=frozenset(marginal),
        invisible_tiles=frozenset(invisible),
        probabilities=probabilities,
        threshold=threshold,
    )
