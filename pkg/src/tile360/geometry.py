"""Spherical viewport geometry for equirectangular tile grids.

A viewpoint is a (pitch, yaw) pair in degrees: pitch (latitude of the
view direction) in [-90, 90], yaw (longitude) in [-180, 180].  The
viewport is the central projection onto the unit sphere of a planar
image rectangle tangent at the viewpoint, with half-extents
tan(h_fov/2) horizontally and tan(v_fov/2) vertically.  This module
computes the latitude/longitude bounding box of that projection in
closed form, maps it to a 1-based tile grid, and provides an
independent Monte Carlo sampler used to validate the closed forms.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

# Grid values this close to an integer are snapped before applying the
# ceiling in tile-index formulas, so exact tile-edge hits computed in
# floating point land on the intended integer.
_CEIL_SNAP = 1e-9


@dataclass(frozen=True)
class ViewAngles:
    """Viewpoint orientation in degrees; roll is carried but unused."""

    pitch: float
    yaw: float
    roll: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.pitch <= 90.0:
            raise ValueError(f"pitch {self.pitch} outside [-90, 90]")
        if not -180.0 <= self.yaw <= 180.0:
            raise ValueError(f"yaw {self.yaw} outside [-180, 180]")


@dataclass(frozen=True)
class Fov:
    """Field of view in degrees, horizontal and vertical, each in (0, 180)."""

    horizontal: float
    vertical: float

    def __post_init__(self):
        for v in (self.horizontal, self.vertical):
            if not 0.0 < v < 180.0:
                raise ValueError(f"field of view {v} outside (0, 180)")


@dataclass(frozen=True)
class TileGrid:
    """Equirectangular tile grid: rows x cols, tiles indexed from 1."""

    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")


@dataclass(frozen=True)
class ViewportBounds:
    """Latitude/longitude bounding box of a projected viewport.

    Longitudes follow the wrap convention [-180, 180]; lon_west >
    lon_east means the box crosses the antimeridian.  When a pole flag
    is set the corresponding latitude is exactly +/-90 and the
    longitude span is the full circle (-180, 180).
    """

    lat_north: float
    lat_south: float
    lon_west: float
    lon_east: float
    covers_north_pole: bool = False
    covers_south_pole: bool = False

    def __post_init__(self):
        if self.lat_north < self.lat_south:
            raise ValueError("lat_north below lat_south")
        if self.covers_north_pole and self.lat_north != 90.0:
            raise ValueError("north pole flag requires lat_north == 90")
        if self.covers_south_pole and self.lat_south != -90.0:
            raise ValueError("south pole flag requires lat_south == -90")
        if (self.covers_north_pole or self.covers_south_pole) and not (
            self.lon_west == -180.0 and self.lon_east == 180.0
        ):
            raise ValueError("pole coverage requires the full longitude span")

    @property
    def wraps_antimeridian(self):
        return self.lon_west > self.lon_east

    @property
    def lon_span(self):
        """Longitude span in degrees, in (0, 360]."""
        if self.covers_north_pole or self.covers_south_pole:
            return 360.0
        span = self.lon_east - self.lon_west
        return span + 360.0 if span < 0 else span


@dataclass(frozen=True)
class TileSet:
    """Rectangular (modulo longitude wrap) block of tiles on a grid.

    rows is an inclusive (first, last) pair; col_segments holds one or
    two inclusive (first, last) column runs, two when the block crosses
    the antimeridian.
    """

    grid: TileGrid
    rows: tuple
    col_segments: tuple

    def columns(self):
        cols = []
        for first, last in self.col_segments:
            cols.extend(range(first, last + 1))
        return cols

    def tiles(self):
        """Member tiles as (row, col) pairs sorted row-major."""
        out = []
        cols = sorted(self.columns())
        for m in range(self.rows[0], self.rows[1] + 1):
            for n in cols:
                out.append((m, n))
        return out

    @property
    def members(self):
        return frozenset(self.tiles())

    def __len__(self):
        return (self.rows[1] - self.rows[0] + 1) * len(self.columns())

    def __contains__(self, tile):
        m, n = tile
        if not self.rows[0] <= m <= self.rows[1]:
            return False
        return any(first <= n <= last for first, last in self.col_segments)


def tileset_from_members(grid, members):
    """Rebuild a TileSet from explicit (row, col) members.

    The members must form a full rectangle of rows by columns, where
    the column band is contiguous or wraps past the last column.
    Anything else raises ValueError.
    """
    tiles = {(int(m), int(n)) for m, n in members}
    if not tiles:
        raise ValueError("empty tile set")
    for m, n in tiles:
        if not (1 <= m <= grid.rows and 1 <= n <= grid.cols):
            raise ValueError(f"tile ({m}, {n}) outside the {grid.rows}x{grid.cols} grid")
    row_list = sorted({m for m, _ in tiles})
    col_list = sorted({n for _, n in tiles})
    if row_list != list(range(row_list[0], row_list[-1] + 1)):
        raise ValueError("tile rows are not contiguous")
    if tiles != {(m, n) for m in row_list for n in col_list}:
        raise ValueError("tiles do not form a full row/column rectangle")
    runs = [[col_list[0], col_list[0]]]
    for n in col_list[1:]:
        if n == runs[-1][1] + 1:
            runs[-1][1] = n
        else:
            runs.append([n, n])
    if len(runs) == 1:
        segments = ((runs[0][0], runs[0][1]),)
    elif len(runs) == 2 and runs[0][0] == 1 and runs[1][1] == grid.cols:
        segments = ((runs[1][0], runs[1][1]), (runs[0][0], runs[0][1]))
    else:
        raise ValueError("tile columns do not form a contiguous or wrapped band")
    return TileSet(grid=grid, rows=(row_list[0], row_list[-1]), col_segments=segments)


def wrap_longitude(x):
    """Normalize a longitude (degrees) into [-180, 180].

    A single fold for inputs in [-540, 540]; repeated for anything
    farther out.  Both -180 and +180 are fixed points.
    """
    while x > 180.0:
        x -= 360.0
    while x < -180.0:
        x += 360.0
    return x


def half_longitude_span(pitch, fov):
    """Half the longitude span of the viewport, in degrees.

    Returns a value in (0, 90] when neither pole is inside the
    viewport, and 180 when the elevated pole is covered.
    """
    if pitch < 0.0:
        return half_longitude_span(-pitch, fov)
    t = math.radians(pitch)
    half_v = math.radians(fov.vertical) / 2.0
    num = math.cos(t) - math.tan(half_v) * math.sin(t)
    if num < 0.0:
        return 180.0
    delta = math.degrees(math.atan2(num, math.tan(math.radians(fov.horizontal) / 2.0)))
    return 90.0 - delta


def southmost_latitude(pitch, fov):
    """Latitude of the southernmost viewport point, in degrees."""
    half_v = math.degrees(math.radians(fov.vertical) / 2.0)
    if pitch <= half_v - 90.0:
        return -90.0
    if pitch <= half_v:
        return pitch - half_v
    t = math.radians(pitch)
    hv = math.radians(fov.vertical) / 2.0
    ha = math.radians(fov.horizontal) / 2.0
    num = math.sin(t) - math.tan(hv) * math.cos(t)
    den = math.hypot(math.cos(t) + math.tan(hv) * math.sin(t), math.tan(ha))
    return math.degrees(math.atan2(num, den))


def northmost_latitude(pitch, fov):
    """Latitude of the northernmost viewport point, in degrees."""
    half_v = math.degrees(math.radians(fov.vertical) / 2.0)
    if pitch >= 90.0 - half_v:
        return 90.0
    if pitch >= -half_v:
        return pitch + half_v
    t = math.radians(pitch)
    hv = math.radians(fov.vertical) / 2.0
    ha = math.radians(fov.horizontal) / 2.0
    num = -math.sin(t) - math.tan(hv) * math.cos(t)
    den = math.hypot(math.cos(t) - math.tan(hv) * math.sin(t), math.tan(ha))
    return -math.degrees(math.atan2(num, den))


def viewport_bounds(view, fov):
    """Closed-form latitude/longitude bounding box of the viewport."""
    lat_n = northmost_latitude(view.pitch, fov)
    lat_s = southmost_latitude(view.pitch, fov)
    half_span = half_longitude_span(view.pitch, fov)
    covers_n = lat_n == 90.0 and half_span == 180.0
    covers_s = lat_s == -90.0 and half_span == 180.0
    if covers_n or covers_s:
        return ViewportBounds(lat_n, lat_s, -180.0, 180.0, covers_n, covers_s)
    lon_w = wrap_longitude(view.yaw - half_span)
    lon_e = wrap_longitude(view.yaw + half_span)
    return ViewportBounds(lat_n, lat_s, lon_w, lon_e)


def _snapped_ceil(x):
    nearest = round(x)
    if abs(x - nearest) < _CEIL_SNAP:
        return int(nearest)
    return math.ceil(x)


def viewport_tile_region(bounds, grid):
    """Smallest tile block covering the viewport bounding box."""
    big_m, big_n = grid.rows, grid.cols
    m0 = _snapped_ceil(big_m - big_m * (bounds.lat_north + 90.0) / 180.0)
    m1 = _snapped_ceil(big_m - big_m * (bounds.lat_south + 90.0) / 180.0)
    m0 = min(max(m0, 1), big_m)
    m1 = min(max(m1, 1), big_m)
    n0 = _snapped_ceil(big_n * (bounds.lon_west + 180.0) / 360.0)
    n1 = _snapped_ceil(big_n * (bounds.lon_east + 180.0) / 360.0)
    n0 = min(max(n0, 1), big_n)
    n1 = min(max(n1, 1), big_n)
    if bounds.wraps_antimeridian:
        segments = ((n0, big_n), (1, n1))
    else:
        segments = ((n0, n1),)
    return TileSet(grid=grid, rows=(m0, m1), col_segments=segments)


def sphere_point(lat, lon):
    """Unit vector for latitude/longitude in degrees.

    The polar axis is +y; longitude 0 points along +z and increases
    toward +x, so lat = asin(y) and lon = atan2(x, z).
    """
    t = math.radians(lat)
    p = math.radians(lon)
    return np.array(
        [math.cos(t) * math.sin(p), math.sin(t), math.cos(t) * math.cos(p)]
    )


def viewpoint_frame(view):
    """Center, right, and up unit vectors of the tangent image plane."""
    t = math.radians(view.pitch)
    p = math.radians(view.yaw)
    center = sphere_point(view.pitch, view.yaw)
    right = np.array([math.cos(p), 0.0, -math.sin(p)])
    up = np.array([-math.sin(t) * math.sin(p), math.cos(t), -math.sin(t) * math.cos(p)])
    return center, right, up


def _pole_pierce(center, right, up, half_a, half_b):
    """Whether the polar axis pierces the image rectangle.

    Returns (north, south): the pierce point t*(0, 1, 0) lies inside
    the rectangle with t > 0 (north) or t < 0 (south).
    """
    mat = np.column_stack([right, up, -np.array([0.0, 1.0, 0.0])])
    try:
        a, b, t = np.linalg.solve(mat, -center)
    except np.linalg.LinAlgError:
        return False, False
    inside = abs(a) <= half_a and abs(b) <= half_b
    return inside and t > 0.0, inside and t < 0.0


def _covering_arc(lons):
    """Minimal arc containing all longitudes; returns (west, east)."""
    s = np.sort(lons)
    gaps = np.diff(s)
    wrap_gap = s[0] + 360.0 - s[-1]
    i = int(np.argmax(gaps)) if gaps.size else -1
    if gaps.size == 0 or wrap_gap >= gaps[i]:
        return float(s[0]), float(s[-1])
    return float(s[i + 1]), float(s[i])


def monte_carlo_bounds(view, fov, samples_per_axis=501):
    """Sampled viewport bounding box, independent of the closed forms.

    Samples a uniform grid on the tangent image rectangle, centrally
    projects onto the unit sphere, and takes empirical extremes.  The
    latitude scan covers the full grid.  Longitude extremes are read
    from the rectangle boundary plus a strided interior subsample:
    along any straight line on the plane the projected longitude is
    monotone (the horizontal component sweeps a fixed-sign polar angle
    around the origin), so interior rows cannot extend the arc spanned
    by their endpoints.  Pole coverage is detected exactly by
    intersecting the polar axis with the rectangle.
    """
    if samples_per_axis < 2:
        raise ValueError("samples_per_axis must be at least 2")
    center, right, up = viewpoint_frame(view)
    half_a = math.tan(math.radians(fov.horizontal) / 2.0)
    half_b = math.tan(math.radians(fov.vertical) / 2.0)
    covers_n, covers_s = _pole_pierce(center, right, up, half_a, half_b)

    lo, hi = _kernels.grid_sin_lat_extremes(
        center, right, up, half_a, half_b, samples_per_axis
    )
    lat_n = 90.0 if covers_n else math.degrees(math.asin(min(hi, 1.0)))
    lat_s = -90.0 if covers_s else math.degrees(math.asin(max(lo, -1.0)))

    if covers_n or covers_s:
        return ViewportBounds(lat_n, lat_s, -180.0, 180.0, covers_n, covers_s)

    n = samples_per_axis
    a = np.linspace(-half_a, half_a, n)
    b = np.linspace(-half_b, half_b, n)
    stride = max(1, n // 64)
    asub = np.unique(np.concatenate([a[::stride], a[-1:]]))
    bsub = np.unique(np.concatenate([b[::stride], b[-1:]]))
    # Boundary points: four edges, then the strided interior grid.
    pts_a = np.concatenate(
        [a, a, np.full(n, -half_a), np.full(n, half_a), np.repeat(asub, bsub.size)]
    )
    pts_b = np.concatenate(
        [np.full(n, -half_b), np.full(n, half_b), b, b, np.tile(bsub, asub.size)]
    )
    p = center[None, :] + pts_a[:, None] * right[None, :] + pts_b[:, None] * up[None, :]
    lons = np.degrees(np.arctan2(p[:, 0], p[:, 2]))
    lon_w, lon_e = _covering_arc(lons)
    return ViewportBounds(lat_n, lat_s, lon_w, lon_e)
