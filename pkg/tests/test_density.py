"""Tests for kernel density surfaces and hotspot extraction"""

import json
import math

import numpy as np
import pytest

from density import (
    DensitySurface,
    GridSpec,
    cell_size_for_bandwidth,
    grid_for_points,
    hotspots,
    hotspots_geojson,
    kde,
    silverman_bandwidth,
    surface_for_points,
    write_hotspots_geojson,
    write_surface_csv,
)
from errors import ConfigError, DataValidationError, NumericalError


def centered_grid(half_cells=5, cell_size=100.0):
    """Odd square grid whose middle cell is centered on the origin"""
    n = 2 * half_cells + 1
    return GridSpec(x0=-(half_cells + 0.5) * cell_size, y0=-(half_cells + 0.5) * cell_size,
                    cell_size=cell_size, n_cols=n, n_rows=n)


def two_clusters(seed=0, n=50):
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 100.0, size=(n, 2))
    b = rng.normal(0.0, 100.0, size=(n, 2)) + [6000.0, 0.0]
    return np.vstack([a, b])


class TestKde:
    def test_single_point_peak(self):
        surface = kde([(0.0, 0.0)], 500.0, centered_grid())
        peak = surface.values[5, 5]
        assert peak == pytest.approx(1.0 / (2.0 * math.pi * 500.0 ** 2), rel=1e-12)
        assert peak == pytest.approx(6.366e-7, rel=1e-3)
        assert surface.values.max() == peak

    def test_coincident_points_match_single_point(self):
        grid = centered_grid()
        single = kde([(30.0, -20.0)], 250.0, grid)
        triple = kde([(30.0, -20.0)] * 3, 250.0, grid)
        np.testing.assert_allclose(triple.values, single.values, rtol=1e-12)

    def test_mass_close_to_one(self):
        rng = np.random.default_rng(2)
        points = rng.normal(0.0, 1000.0, size=(200, 2))
        h = 400.0
        grid = grid_for_points(points, cell_size=50.0, pad=5 * h)
        surface = kde(points, h, grid)
        assert 0.95 <= surface.mass() <= 1.0 + 1e-9

    def test_translation(self):
        rng = np.random.default_rng(3)
        points = rng.uniform(-300.0, 300.0, size=(20, 2))
        grid = centered_grid(half_cells=8)
        base = kde(points, 150.0, grid)

        shift = np.array([7 * 100.0, -3 * 100.0])
        moved_grid = GridSpec(x0=grid.x0 + shift[0], y0=grid.y0 + shift[1], cell_size=grid.cell_size,
                              n_cols=grid.n_cols, n_rows=grid.n_rows)
        moved = kde(points + shift, 150.0, moved_grid)
        np.testing.assert_allclose(moved.values, base.values, rtol=1e-9, atol=1e-20)

    def test_symmetric_point_set_gives_symmetric_surface(self):
        points = [(-200.0, 0.0), (200.0, 0.0)]
        surface = kde(points, 150.0, centered_grid())
        np.testing.assert_allclose(surface.values, surface.values[:, ::-1], rtol=1e-12)

    def test_threads_are_identical(self):
        points = two_clusters()
        grid = grid_for_points(points, cell_size=25.0, pad=1000.0)
        assert grid.n_rows > 64
        sequential = kde(points, 150.0, grid, n_jobs=1)
        threaded = kde(points, 150.0, grid, n_jobs=3)
        np.testing.assert_array_equal(sequential.values, threaded.values)

    def test_cutoff_changes_little(self):
        points = two_clusters()
        grid = grid_for_points(points, cell_size=100.0, pad=1000.0)
        full = kde(points, 200.0, grid)
        cut = kde(points, 200.0, grid, cutoff_bandwidths=6.0)
        assert np.abs(full.values - cut.values).max() <= 1e-7 * full.values.max()

    def test_adding_a_point_never_lowers_the_unnormalised_density(self):
        rng = np.random.default_rng(6)
        points = rng.uniform(-400.0, 400.0, size=(15, 2))
        grid = centered_grid(half_cells=8)
        previous = kde(points, 150.0, grid).values * len(points)
        for extra in rng.uniform(-400.0, 400.0, size=(5, 2)):
            points = np.vstack([points, extra])
            current = kde(points, 150.0, grid).values * len(points)
            assert np.all(current >= previous * (1.0 - 1e-12))
            previous = current

    def test_invalid_bandwidth(self):
        with pytest.raises(NumericalError) as excinfo:
            kde([(0.0, 0.0)], 0.0, centered_grid())
        assert excinfo.value.code == "invalid_bandwidth"

    def test_grid_must_cover_points(self):
        with pytest.raises(DataValidationError) as excinfo:
            kde([(10000.0, 0.0)], 100.0, centered_grid())
        assert excinfo.value.code == "grid_coverage"

    def test_empty_points(self):
        with pytest.raises(DataValidationError):
            kde([], 100.0, centered_grid())


class TestBandwidth:
    def test_formula(self):
        points = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]
        assert silverman_bandwidth(points) == pytest.approx(4 ** (-1 / 6) * math.sqrt(1 / 3))

    def test_scales_with_points(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(100, 2))
        assert silverman_bandwidth(points * 10.0) == pytest.approx(10.0 * silverman_bandwidth(points))

    def test_standardized_sample(self):
        rng = np.random.default_rng(5)
        points = rng.normal(size=(1000, 2))
        points = (points - points.mean(axis=0)) / points.std(axis=0, ddof=1)
        assert silverman_bandwidth(points) == pytest.approx(1000 ** (-1 / 6), rel=1e-9)
        assert silverman_bandwidth(points) == pytest.approx(0.316, abs=1e-3)

    @pytest.mark.parametrize("points", [[(1.0, 1.0)], [(2.0, 3.0)] * 5])
    def test_coincident_points(self, points):
        with pytest.raises(NumericalError) as excinfo:
            silverman_bandwidth(points)
        assert excinfo.value.code == "coincident_points"


class TestSurfaceForPoints:
    def test_cell_follows_narrow_bandwidth(self):
        assert cell_size_for_bandwidth(250.0, 1000.0) == 250.0
        assert cell_size_for_bandwidth(250.0, 60.0) == 30.0

    def test_narrow_bandwidth_keeps_its_mass(self):
        rng = np.random.default_rng(7)
        points = rng.uniform(0.0, 3000.0, size=(30, 2))
        surface = surface_for_points(points, 60.0, 250.0, pad_bandwidths=4.0)
        assert surface.cell_size == 30.0
        assert 0.95 <= surface.mass() <= 1.0 + 1e-9

    def test_wide_bandwidth_keeps_configured_cell(self):
        rng = np.random.default_rng(8)
        points = rng.normal(0.0, 1500.0, size=(200, 2))
        surface = surface_for_points(points, 800.0, 250.0)
        assert surface.cell_size == 250.0
        assert 0.95 <= surface.mass() <= 1.0 + 1e-9

    def test_short_padding_loses_mass(self):
        with pytest.raises(NumericalError) as excinfo:
            surface_for_points([(0.0, 0.0)], 100.0, 250.0, pad_bandwidths=0.5)
        assert excinfo.value.code == "mass_out_of_range"
        assert excinfo.value.details["mass"] < 0.95

    def test_refined_grid_size_is_capped(self):
        points = [(0.0, 0.0), (1.0e6, 1.0e6)]
        with pytest.raises(NumericalError) as excinfo:
            surface_for_points(points, 1.0, 250.0)
        assert excinfo.value.code == "grid_too_large"

    def test_invalid_bandwidth(self):
        with pytest.raises(NumericalError) as excinfo:
            surface_for_points([(0.0, 0.0)], float("nan"), 250.0)
        assert excinfo.value.code == "invalid_bandwidth"


class TestGrid:
    def test_grid_is_aligned_and_padded(self):
        grid = grid_for_points([(120.0, 40.0), (480.0, 910.0)], cell_size=100.0, pad=50.0)
        assert (grid.x0, grid.y0) == (0.0, -100.0)
        assert grid.x1 >= 530.0 and grid.y1 >= 960.0
        assert grid.covers(np.array([[120.0, 40.0], [480.0, 910.0]]))

    def test_invalid_grid(self):
        with pytest.raises(DataValidationError):
            GridSpec(x0=0.0, y0=0.0, cell_size=0.0, n_cols=3, n_rows=3)


class TestHotspots:
    def test_zero_quantile_selects_every_positive_cell(self):
        surface = kde([(0.0, 0.0)], 300.0, centered_grid())
        result = hotspots(surface, 0.0)
        assert len(result.cells) == int((surface.values > 0).sum())
        assert len(result.polygons) == 1

    def test_two_clusters_give_two_polygons(self):
        points = two_clusters()
        grid = grid_for_points(points, cell_size=100.0, pad=1000.0)
        result = hotspots(kde(points, 200.0, grid), 0.95)

        assert len(result.polygons) == 2
        centroids = sorted(p.centroid.x for p in result.polygons)
        assert abs(centroids[0]) < 500.0
        assert abs(centroids[1] - 6000.0) < 500.0
        assert sum(result.cell_counts) == len(result.cells)

    def test_selected_cells_meet_threshold(self):
        points = two_clusters(seed=1)
        surface = kde(points, 250.0, grid_for_points(points, cell_size=100.0, pad=1000.0))
        result = hotspots(surface, 0.8)
        for r, c in result.cells:
            assert surface.values[r, c] >= result.threshold
        assert max(result.peaks) == surface.values.max()

    def test_degenerate_surface(self):
        surface = DensitySurface(grid=centered_grid(1), values=np.zeros((3, 3)), bandwidth=1.0, point_count=0)
        with pytest.raises(NumericalError) as excinfo:
            hotspots(surface)
        assert excinfo.value.code == "degenerate_surface"

    def test_quantile_range(self):
        surface = kde([(0.0, 0.0)], 300.0, centered_grid())
        with pytest.raises(ConfigError) as excinfo:
            hotspots(surface, 1.0)
        assert excinfo.value.code == "invalid_quantile"
        assert excinfo.value.exit_code == 1


def test_geojson_document(tmp_path):
    points = two_clusters()
    surface = kde(points, 200.0, grid_for_points(points, cell_size=100.0, pad=1000.0))
    sets = {"under_reporting": hotspots(surface, 0.95), "over_reporting": hotspots(surface, 0.99)}

    document = hotspots_geojson(sets)
    assert document["type"] == "FeatureCollection"
    directions = [f["properties"]["direction"] for f in document["features"]]
    assert directions == sorted(directions)
    first = document["features"][0]
    assert first["geometry"]["type"] in ("Polygon", "MultiPolygon")
    assert set(first["properties"]) == {"direction", "quantile", "bandwidth", "component",
                                        "cell_count", "peak_density"}

    path = tmp_path / "hotspots.geojson"
    write_hotspots_geojson(sets, str(path), extra={"seed": 1})
    loaded = json.loads(path.read_text())
    assert loaded["properties"] == {"seed": 1}
    assert len(loaded["features"]) == len(document["features"])


def test_surface_csv(tmp_path):
    surface = kde([(0.0, 0.0)], 300.0, centered_grid(1))
    path = tmp_path / "surface.csv"
    write_surface_csv(surface, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,density"
    assert len(lines) == 1 + 9
