"""Viewport projection geometry: closed-form bounds vs sampled oracles."""

import math

import numpy as np
import pytest

from tile360.geometry import (
    Fov,
    TileGrid,
    TileSet,
    ViewAngles,
    ViewportBounds,
    monte_carlo_bounds,
    southmost_latitude,
    tileset_from_members,
    viewport_bounds,
    viewport_tile_region,
    wrap_longitude,
)

FOV = Fov(horizontal=110.0, vertical=90.0)
GRID = TileGrid(rows=8, cols=8)


def test_centered_viewport_box():
    # Level view at the prime meridian: the box is the FoV itself.
    b = viewport_bounds(ViewAngles(pitch=0.0, yaw=0.0), FOV)
    assert b.lat_north == pytest.approx(45.0, abs=1e-12)
    assert b.lat_south == pytest.approx(-45.0, abs=1e-12)
    assert b.lon_west == pytest.approx(-55.0, abs=1e-12)
    assert b.lon_east == pytest.approx(55.0, abs=1e-12)
    assert not b.covers_north_pole and not b.covers_south_pole
    assert not b.wraps_antimeridian
    assert b.lon_span == pytest.approx(110.0, abs=1e-12)


def test_high_pitch_southmost_latitude():
    # Oracle: densely sample the bottom edge of the projected viewport
    # (2e6 points) and take the minimum latitude.  Frozen result for
    # pitch 60 with a 110x90 FoV; the corner no longer attains the
    # minimum here, the bottom edge does.
    assert southmost_latitude(60.0, FOV) == pytest.approx(
        10.492878322407108, abs=1e-9
    )
    # Mirror symmetry under pitch sign flip.
    b_up = viewport_bounds(ViewAngles(pitch=60.0, yaw=0.0), FOV)
    b_down = viewport_bounds(ViewAngles(pitch=-60.0, yaw=0.0), FOV)
    assert b_up.lat_south == pytest.approx(-b_down.lat_north, abs=1e-12)
    assert b_up.lat_north == pytest.approx(-b_down.lat_south, abs=1e-12)


def test_pole_coverage():
    b = viewport_bounds(ViewAngles(pitch=80.0, yaw=30.0), FOV)
    assert b.covers_north_pole and not b.covers_south_pole
    assert b.lat_north == 90.0
    assert (b.lon_west, b.lon_east) == (-180.0, 180.0)
    assert b.lon_span == 360.0
    s = viewport_bounds(ViewAngles(pitch=-80.0, yaw=30.0), FOV)
    assert s.covers_south_pole and s.lat_south == -90.0


def test_antimeridian_wrap():
    b = viewport_bounds(ViewAngles(pitch=0.0, yaw=178.0), FOV)
    assert b.lon_west == pytest.approx(123.0, abs=1e-12)
    assert b.lon_east == pytest.approx(-127.0, abs=1e-12)
    assert b.wraps_antimeridian
    assert b.lon_span == pytest.approx(110.0, abs=1e-12)


def test_wrap_longitude():
    assert wrap_longitude(190.0) == -170.0
    assert wrap_longitude(-190.0) == 170.0
    assert wrap_longitude(540.0) == 180.0
    assert wrap_longitude(180.0) == 180.0
    assert wrap_longitude(-180.0) == -180.0
    assert wrap_longitude(725.0) == pytest.approx(5.0)


def test_bounds_validation():
    with pytest.raises(ValueError):
        ViewportBounds(lat_north=-10.0, lat_south=10.0, lon_west=0.0, lon_east=1.0)
    with pytest.raises(ValueError):
        ViewportBounds(
            lat_north=80.0, lat_south=0.0, lon_west=-180.0, lon_east=180.0,
            covers_north_pole=True,
        )
    with pytest.raises(ValueError):
        ViewportBounds(
            lat_north=90.0, lat_south=0.0, lon_west=-10.0, lon_east=10.0,
            covers_north_pole=True,
        )


def test_monte_carlo_agreement():
    # Random viewpoints, including forced polar and wrap-around cases,
    # against the sampled bounding box.
    rng = np.random.default_rng(7)
    for case in range(40):
        pitch = float(rng.uniform(-90.0, 90.0))
        yaw = float(rng.uniform(-180.0, 180.0))
        if case % 8 == 0:
            pitch = float(rng.uniform(65.0, 90.0)) * (1 if case % 16 else -1)
        if case % 8 == 4:
            yaw = float(rng.uniform(170.0, 180.0)) * (1 if case % 16 < 8 else -1)
        fov = Fov(float(rng.uniform(60.0, 120.0)), float(rng.uniform(60.0, 120.0)))
        view = ViewAngles(pitch=pitch, yaw=yaw)
        got = viewport_bounds(view, fov)
        ref = monte_carlo_bounds(view, fov, samples_per_axis=501)
        assert got.covers_north_pole == ref.covers_north_pole
        assert got.covers_south_pole == ref.covers_south_pole
        assert abs(got.lat_north - ref.lat_north) < 0.5
        assert abs(got.lat_south - ref.lat_south) < 0.5
        if not (got.covers_north_pole or got.covers_south_pole):
            for a, b in ((got.lon_west, ref.lon_west), (got.lon_east, ref.lon_east)):
                assert abs(wrap_longitude(a - b)) < 0.5


def test_viewport_tile_region_centered():
    b = viewport_bounds(ViewAngles(pitch=0.0, yaw=0.0), FOV)
    region = viewport_tile_region(b, GRID)
    assert region.rows == (2, 6)
    assert region.col_segments == ((3, 6),)
    assert len(region) == 20
    assert (2, 3) in region and (6, 6) in region
    assert (1, 3) not in region and (2, 7) not in region


def test_viewport_tile_region_wrapped():
    b = viewport_bounds(ViewAngles(pitch=0.0, yaw=178.0), FOV)
    region = viewport_tile_region(b, GRID)
    # Two column runs: the tail end of the grid plus the leading edge.
    assert len(region.col_segments) == 2
    first, second = region.col_segments
    assert first[1] == GRID.cols and second[0] == 1
    cols = region.columns()
    assert sorted(cols) == sorted(set(cols))


def test_viewport_tile_region_polar():
    b = viewport_bounds(ViewAngles(pitch=85.0, yaw=0.0), FOV)
    region = viewport_tile_region(b, GRID)
    assert region.rows[0] == 1
    assert region.col_segments == ((1, 8),)


def test_tileset_round_trip():
    region = TileSet(grid=GRID, rows=(2, 6), col_segments=((3, 6),))
    rebuilt = tileset_from_members(GRID, region.tiles())
    assert rebuilt.members == region.members
    assert rebuilt.rows == region.rows

    wrapped = TileSet(grid=GRID, rows=(3, 4), col_segments=((7, 8), (1, 2)))
    again = tileset_from_members(GRID, wrapped.tiles())
    assert again.members == wrapped.members
    assert again.col_segments == ((7, 8), (1, 2))


def test_tileset_from_members_validation():
    with pytest.raises(ValueError):
        tileset_from_members(GRID, [])
    with pytest.raises(ValueError):
        tileset_from_members(GRID, [(0, 1)])
    with pytest.raises(ValueError):
        tileset_from_members(GRID, [(1, 1), (2, 2)])  # not a full rectangle
    with pytest.raises(ValueError):
        tileset_from_members(GRID, [(1, 1), (1, 3)])  # gap, no wrap
    with pytest.raises(ValueError):
        tileset_from_members(GRID, [(1, 2), (3, 2)])  # row gap


def test_grid_validation():
    with pytest.raises(ValueError):
        TileGrid(rows=0, cols=8)
