import math

import numpy as np
import pytest

from fleetsim.geo import (
    GridSpec,
    Location,
    OutOfBoundsError,
    RegionMap,
    RegionMapError,
    aggregate_to_regions,
    block_region_map,
    cell_of,
    center_of,
    haversine,
    haversine_arrays,
    region_of,
    METERS_PER_DEG_LAT,
)


def grid_2x2(cell=150.0):
    return GridSpec(rows=2, cols=2, cell_size=cell, origin=Location(40.0, -74.0))


class TestCellOf:
    def test_origin_corner_is_cell_zero(self):
        g = grid_2x2()
        assert cell_of(g.origin, g) == (0, 0)

    def test_interior_boundary_goes_to_higher_cell(self):
        g = grid_2x2()
        on_row_boundary = Location(g.origin.lat + g.d_lat, g.origin.lon)
        assert cell_of(on_row_boundary, g) == (1, 0)
        on_col_boundary = Location(g.origin.lat, g.origin.lon + g.d_lon)
        assert cell_of(on_col_boundary, g) == (0, 1)

    def test_offset_160m_east_in_150m_cells(self):
        # hand computation: 160 m east of origin crosses one 150 m column
        g = grid_2x2(cell=150.0)
        lon = g.origin.lon + g.d_lon * (160.0 / 150.0)
        assert cell_of(Location(g.origin.lat, lon), g) == (0, 1)

    def test_out_of_bounds_raises(self):
        g = grid_2x2()
        with pytest.raises(OutOfBoundsError):
            cell_of(Location(g.origin.lat - 1e-9, g.origin.lon), g)
        with pytest.raises(OutOfBoundsError):
            cell_of(Location(g.lat_max, g.origin.lon), g)

    def test_round_trip_through_center(self):
        g = GridSpec(rows=7, cols=5, cell_size=320.0, origin=Location(35.2, 139.4))
        for r in range(g.rows):
            for c in range(g.cols):
                assert cell_of(center_of((r, c), g), g) == (r, c)

    def test_vectorized_matches_scalar(self):
        g = GridSpec(rows=9, cols=11, cell_size=250.0, origin=Location(40.0, -74.0))
        rng = np.random.default_rng(7)
        lats = rng.uniform(g.origin.lat, g.lat_max - 1e-9, size=50)
        lons = rng.uniform(g.origin.lon, g.lon_max - 1e-9, size=50)
        from fleetsim.geo import cell_arrays

        rows, cols = cell_arrays(lats, lons, g)
        for lat, lon, r, c in zip(lats, lons, rows, cols):
            assert cell_of(Location(lat, lon), g) == (r, c)


class TestRegionMap:
    def test_identity_maps_everything_to_zero(self):
        rm = RegionMap.identity(3, 4)
        for r in range(3):
            for c in range(4):
                assert region_of((r, c), rm) == 0

    def test_row_regions(self):
        rm = RegionMap(np.array([[0, 0], [1, 1]]), 2)
        assert region_of((1, 0), rm) == 1
        assert region_of((0, 1), rm) == 0

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 5, size=(6, 4))
        rm = RegionMap(a, 5)
        path = tmp_path / "regions.csv"
        rm.to_csv(path)
        back = RegionMap.from_csv(path, 6, 4)
        assert np.array_equal(back.assignment, a)
        for r in range(6):
            for c in range(4):
                assert region_of((r, c), back) == a[r, c]

    def test_incomplete_file_rejected(self, tmp_path):
        path = tmp_path / "partial.csv"
        path.write_text("row,col,region_id\n0,0,0\n")
        with pytest.raises(RegionMapError):
            RegionMap.from_csv(path, 2, 2)

    def test_unknown_cell_is_configuration_error(self):
        rm = RegionMap.identity(2, 2)
        with pytest.raises(RegionMapError):
            region_of((5, 0), rm)

    def test_block_map_layout(self):
        g = GridSpec(rows=6, cols=6, cell_size=100.0, origin=Location(0.0, 0.0))
        rm = block_region_map(g, 3, 3)
        assert rm.region_count == 4
        assert region_of((0, 0), rm) == 0
        assert region_of((0, 3), rm) == 1
        assert region_of((3, 0), rm) == 2
        assert region_of((5, 5), rm) == 3


class TestAggregate:
    def test_zero_heat(self):
        rm = RegionMap.identity(3, 3)
        assert aggregate_to_regions(np.zeros((3, 3)), rm).tolist() == [0.0]

    def test_single_cell_single_region(self):
        rm = RegionMap.identity(2, 2)
        heat = np.zeros((2, 2))
        heat[1, 0] = 5.0
        assert aggregate_to_regions(heat, rm).tolist() == [5.0]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        assignment = rng.integers(0, 2, size=(4, 4))
        rm = RegionMap(assignment, 2)
        heat = rng.integers(0, 9, size=(4, 4)).astype(float)
        got = aggregate_to_regions(heat, rm)
        expect = np.zeros(2)
        for r in range(4):
            for c in range(4):
                expect[assignment[r, c]] += heat[r, c]
        np.testing.assert_array_equal(got, expect)

    def test_conserves_total_count(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            rows, cols, m = rng.integers(1, 8, size=3)
            rm = RegionMap(rng.integers(0, m, size=(rows, cols)), int(m))
            heat = rng.uniform(0, 10, size=(rows, cols))
            assert aggregate_to_regions(heat, rm).sum() == pytest.approx(heat.sum())

    def test_dimension_mismatch(self):
        rm = RegionMap.identity(2, 2)
        with pytest.raises(ValueError):
            aggregate_to_regions(np.zeros((3, 3)), rm)


class TestHaversine:
    def test_zero_iff_same_point(self):
        a = Location(40.7, -74.0)
        assert haversine(a, a) == 0.0
        assert haversine(a, Location(40.7, -74.0001)) > 0.0

    def test_one_degree_latitude(self):
        # 2*pi*R/360 of the fixed-earth model, within a meter
        a = Location(10.0, 20.0)
        b = Location(11.0, 20.0)
        assert haversine(a, b) == pytest.approx(METERS_PER_DEG_LAT, abs=1.0)
        assert haversine(a, b) == pytest.approx(111_195.0, abs=1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            a = Location(rng.uniform(-60, 60), rng.uniform(-180, 180))
            b = Location(rng.uniform(-60, 60), rng.uniform(-180, 180))
            assert haversine(a, b) == pytest.approx(haversine(b, a), rel=0, abs=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            pts = [Location(rng.uniform(-60, 60), rng.uniform(-180, 180)) for _ in range(3)]
            ab = haversine(pts[0], pts[1])
            bc = haversine(pts[1], pts[2])
            ac = haversine(pts[0], pts[2])
            assert ac <= ab + bc + 1e-6 * max(1.0, ac)

    def test_array_version_matches(self):
        rng = np.random.default_rng(4)
        lats1 = rng.uniform(-60, 60, 30)
        lons1 = rng.uniform(-180, 180, 30)
        lats2 = rng.uniform(-60, 60, 30)
        lons2 = rng.uniform(-180, 180, 30)
        arr = haversine_arrays(lats1, lons1, lats2, lons2)
        for i in range(30):
            ref = haversine(Location(lats1[i], lons1[i]), Location(lats2[i], lons2[i]))
            assert arr[i] == pytest.approx(ref, rel=1e-12)


def test_grid_invariants():
    with pytest.raises(ValueError):
        GridSpec(rows=0, cols=3, cell_size=100.0, origin=Location(0, 0))
    with pytest.raises(ValueError):
        GridSpec(rows=3, cols=3, cell_size=-1.0, origin=Location(0, 0))
    g = GridSpec(rows=4, cols=4, cell_size=200.0, origin=Location(45.0, 7.0))
    # mid-latitude cell extent should equal cell_size within rounding
    mid = Location(45.0 + g.d_lat * 2, 7.0)
    east = Location(mid.lat, mid.lon + g.d_lon)
    assert haversine(mid, east) == pytest.approx(200.0, rel=1e-3)
