"""Tile visibility probabilities and viewport/marginal/invisible splits."""

import numpy as np
import pytest

from tile360.error_model import LaplaceParams
from tile360.geometry import Fov, TileGrid, ViewAngles, viewport_bounds
from tile360.visibility import classify_tiles, tile_bounds, tile_visibility

GRID = TileGrid(8, 8)
FOV = Fov(110.0, 90.0)
ERR5 = LaplaceParams(scale=5.0)


def centered_bounds():
    return viewport_bounds(ViewAngles(pitch=0.0, yaw=0.0), FOV)


def test_tile_bounds_arithmetic():
    tb = tile_bounds(1, 1, GRID)
    assert (tb.lat_upper, tb.lat_lower) == (90.0, 67.5)
    assert (tb.lon_left, tb.lon_right) == (-180.0, -135.0)
    tb = tile_bounds(8, 8, GRID)
    assert (tb.lat_upper, tb.lat_lower) == (-67.5, -90.0)
    assert (tb.lon_left, tb.lon_right) == (135.0, 180.0)
    with pytest.raises(ValueError):
        tile_bounds(0, 1, GRID)
    with pytest.raises(ValueError):
        tile_bounds(1, 9, GRID)


def test_seam_tile_probability():
    # Tile (7,4) shares its upper edge with the viewport's south edge,
    # so the latitude factor is exactly half under a symmetric error.
    # Frozen total cross-checked by 2e6 Monte Carlo perturbations of
    # the viewport box (agreement within 4e-4).
    vis = tile_visibility(tile_bounds(7, 4, GRID), centered_bounds(), ERR5, ERR5)
    assert vis.p_lat == pytest.approx(0.5, abs=1e-7)
    assert vis.p_total == pytest.approx(0.4999958164445878, abs=1e-12)
    assert vis.p_total == vis.p_lat * vis.p_lon


def test_probability_symmetry():
    # The centered viewport is symmetric in both axes, so mirrored
    # tiles carry identical probabilities.
    cls = classify_tiles(GRID, centered_bounds(), ERR5, ERR5, 0.05)
    for (a, b) in (((7, 4), (7, 5)), ((7, 3), (7, 6)), ((1, 4), (8, 4))):
        assert cls.probability(*a).p_total == pytest.approx(
            cls.probability(*b).p_total, abs=1e-15
        )
    assert cls.probability(1, 4).p_total == pytest.approx(
        0.005554444263686469, abs=1e-12
    )


def test_classification_partition():
    cls = classify_tiles(GRID, centered_bounds(), ERR5, ERR5, 0.05)
    vp = cls.viewport_tiles.members
    assert len(vp) == 20
    assert cls.viewport_tiles.rows == (2, 6)
    assert cls.marginal_tiles == frozenset({(7, 3), (7, 4), (7, 5), (7, 6)})
    assert len(cls.invisible_tiles) == 40
    everything = vp | cls.marginal_tiles | cls.invisible_tiles
    assert everything == {(m, n) for m in range(1, 9) for n in range(1, 9)}
    assert not (vp & cls.marginal_tiles)
    assert not (vp & cls.invisible_tiles)
    assert not (cls.marginal_tiles & cls.invisible_tiles)


def test_sharp_prediction_limit():
    # With a near-zero error scale only the south seam keeps mass: the
    # interval there starts exactly at 0, which carries probability 1/2
    # regardless of scale.  Every other non-viewport tile collapses to 0.
    tiny = LaplaceParams(scale=1e-6)
    cls = classify_tiles(GRID, centered_bounds(), tiny, tiny, 0.4)
    assert cls.marginal_tiles == frozenset({(7, 3), (7, 4), (7, 5), (7, 6)})
    for tile in cls.marginal_tiles:
        assert cls.probability(*tile).p_total == pytest.approx(0.5, abs=1e-9)
    for tile in cls.invisible_tiles:
        assert cls.probability(*tile).p_total < 1e-6


def test_wrapped_viewport_probabilities():
    bounds = viewport_bounds(ViewAngles(pitch=0.0, yaw=178.0), FOV)
    assert bounds.wraps_antimeridian
    cls = classify_tiles(GRID, bounds, ERR5, ERR5, 0.05)
    for vis in cls.probabilities.values():
        assert 0.0 <= vis.p_lat <= 1.0
        assert 0.0 <= vis.p_lon <= 1.0
        assert vis.p_total == vis.p_lat * vis.p_lon
    # Same latitude structure as the centered case: yaw only shifts
    # longitudes, so the south seam still holds the marginal row.
    assert {m for m, _ in cls.marginal_tiles} == {7}
    # Mirror of the centered classification rotated by 178 degrees:
    # equal counts per class.
    centered = classify_tiles(GRID, centered_bounds(), ERR5, ERR5, 0.05)
    assert len(cls.marginal_tiles) == len(centered.marginal_tiles)
    assert len(cls.viewport_tiles) == len(centered.viewport_tiles)


def test_polar_viewport_classification():
    bounds = viewport_bounds(ViewAngles(pitch=85.0, yaw=0.0), FOV)
    cls = classify_tiles(GRID, bounds, ERR5, ERR5, 0.05)
    assert cls.viewport_tiles.rows[0] == 1
    assert cls.viewport_tiles.col_segments == ((1, 8),)
    # Pole coverage spans every longitude, so each non-viewport tile's
    # longitude factor integrates over the whole circle.
    below = cls.viewport_tiles.rows[1] + 1
    if below <= GRID.rows:
        for n in range(1, 9):
            assert cls.probabilities[(below, n)].p_lon == pytest.approx(1.0, abs=1e-9)


def test_full_circle_longitude():
    # Tile width plus viewport span covering 360 degrees means no
    # longitude error can hide the tile; a one-column grid always hits
    # this branch.
    grid = TileGrid(4, 1)
    bounds = viewport_bounds(ViewAngles(pitch=0.0, yaw=0.0), FOV)
    vis = tile_visibility(tile_bounds(2, 1, grid), bounds, ERR5, ERR5)
    assert vis.p_lon == pytest.approx(1.0, abs=1e-12)


def test_threshold_validation():
    b = centered_bounds()
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            classify_tiles(GRID, b, ERR5, ERR5, bad)
