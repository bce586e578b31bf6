"""Grid geometry, region aggregation and coordinate math.

The service area is discretized into an equal-angle grid of cells whose
metric extent at the grid's mid latitude equals ``cell_size`` meters.
Cells follow a half-open convention: a cell owns its south and west
edges, so a point exactly on an interior boundary belongs to the
higher-index cell.  All values here are immutable after construction
and safe to share between threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# meters spanned by one degree of latitude on the spherical earth model
METERS_PER_DEG_LAT = 2.0 * math.pi * EARTH_RADIUS_M / 360.0


# fraction of a cell by which offsets are snapped before flooring
_BOUNDARY_SNAP = 1e-9


class OutOfBoundsError(ValueError):
    """A coordinate fell outside the grid's bounds."""


class RegionMapError(ValueError):
    """A region assignment is missing, inconsistent or malformed."""


@dataclass(frozen=True)
class Location:
    """A WGS-ish latitude/longitude pair in decimal degrees."""

    lat: float
    lon: float


@dataclass(frozen=True)
class GridSpec:
    """Rectangular cell grid anchored at a south-west origin.

    ``d_lat``/``d_lon`` are the angular cell extents derived from
    ``cell_size`` so that a cell measures ``cell_size`` meters at the
    grid's mid latitude.
    """

    rows: int
    cols: int
    cell_size: float
    origin: Location
    d_lat: float = field(init=False)
    d_lon: float = field(init=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        d_lat = self.cell_size / METERS_PER_DEG_LAT
        mid_lat = self.origin.lat + d_lat * self.rows / 2.0
        d_lon = self.cell_size / (METERS_PER_DEG_LAT * math.cos(math.radians(mid_lat)))
        object.__setattr__(self, "d_lat", d_lat)
        object.__setattr__(self, "d_lon", d_lon)

    @property
    def lat_max(self) -> float:
        return self.origin.lat + self.rows * self.d_lat

    @property
    def lon_max(self) -> float:
        return self.origin.lon + self.cols * self.d_lon

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def contains(self, loc: Location) -> bool:
        """True when ``loc`` is inside the half-open bounds rectangle."""
        return (
            self.origin.lat <= loc.lat < self.lat_max
            and self.origin.lon <= loc.lon < self.lon_max
        )


def cell_of(loc: Location, grid: GridSpec) -> tuple[int, int]:
    """Map a location to its (row, col) cell index.

    Floor semantics: the cell owns its south-west edge, so boundary
    points go to the higher-index cell.  Out-of-bounds locations raise
    :class:`OutOfBoundsError` rather than clamping.
    """
    if not grid.contains(loc):
        raise OutOfBoundsError(
            f"location ({loc.lat}, {loc.lon}) outside grid bounds "
            f"[{grid.origin.lat}, {grid.lat_max}) x [{grid.origin.lon}, {grid.lon_max})"
        )
    # the 1e-9-cell snap (sub-micron) keeps points constructed as
    # origin + k*d_lat on the boundary they name despite rounding
    row = int(math.floor((loc.lat - grid.origin.lat) / grid.d_lat + _BOUNDARY_SNAP))
    col = int(math.floor((loc.lon - grid.origin.lon) / grid.d_lon + _BOUNDARY_SNAP))
    row = min(row, grid.rows - 1)
    col = min(col, grid.cols - 1)
    return (row, col)


def center_of(cell: tuple[int, int], grid: GridSpec) -> Location:
    """Center coordinates of a grid cell."""
    row, col = cell
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise OutOfBoundsError(f"cell {cell} outside {grid.rows}x{grid.cols} grid")
    return Location(
        grid.origin.lat + (row + 0.5) * grid.d_lat,
        grid.origin.lon + (col + 0.5) * grid.d_lon,
    )


def cell_arrays(lats: np.ndarray, lons: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`cell_of` for coordinate arrays already in bounds."""
    rows = np.floor((np.asarray(lats) - grid.origin.lat) / grid.d_lat + _BOUNDARY_SNAP).astype(np.int64)
    cols = np.floor((np.asarray(lons) - grid.origin.lon) / grid.d_lon + _BOUNDARY_SNAP).astype(np.int64)
    np.clip(rows, 0, grid.rows - 1, out=rows)
    np.clip(cols, 0, grid.cols - 1, out=cols)
    return rows, cols


@dataclass(frozen=True)
class RegionMap:
    """Total assignment of fine-grid cells to region ids in [0, region_count).

    The assignment is data, typically loaded from a partition file; there
    is no hard-coded zoning.  ``-1`` marks an unmapped cell and trips
    :class:`RegionMapError` on lookup.
    """

    assignment: np.ndarray  # (rows, cols) int region ids
    region_count: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        a.setflags(write=False)
        if a.ndim != 2:
            raise RegionMapError(f"assignment must be 2-D, got shape {a.shape}")
        valid = a[a >= 0]
        if valid.size and valid.max() >= self.region_count:
            raise RegionMapError(
                f"region id {valid.max()} out of range for {self.region_count} regions"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.assignment.shape

    @classmethod
    def identity(cls, rows: int, cols: int) -> "RegionMap":
        """Single-region map covering the whole grid."""
        return cls(np.zeros((rows, cols), dtype=np.int64), 1)

    @classmethod
    def from_csv(cls, path, rows: int, cols: int) -> "RegionMap":
        """Load a ``row,col,region_id`` partition file covering every cell."""
        a = np.full((rows, cols), -1, dtype=np.int64)
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                a[int(rec["row"]), int(rec["col"])] = int(rec["region_id"])
        if (a < 0).any():
            missing = int((a < 0).sum())
            raise RegionMapError(f"partition file leaves {missing} cells unmapped")
        return cls(a, int(a.max()) + 1)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "col", "region_id"])
            for r in range(self.assignment.shape[0]):
                for c in range(self.assignment.shape[1]):
                    writer.writerow([r, c, int(self.assignment[r, c])])


def region_of(cell: tuple[int, int], rm: RegionMap) -> int:
    """Region id of a fine-grid cell; unmapped cells are a configuration error."""
    row, col = cell
    rows, cols = rm.assignment.shape
    if not (0 <= row < rows and 0 <= col < cols):
        raise RegionMapError(f"cell {cell} outside {rows}x{cols} region map")
    rid = int(rm.assignment[row, col])
    if rid < 0:
        raise RegionMapError(f"cell {cell} has no region assigned")
    return rid


def aggregate_to_regions(heat: np.ndarray, rm: RegionMap) -> np.ndarray:
    """Sum a per-cell heat map into per-region totals (count conserving)."""
    heat = np.asarray(heat, dtype=np.float64)
    if heat.shape != rm.assignment.shape:
        raise ValueError(
            f"heat shape {heat.shape} does not match region map {rm.assignment.shape}"
        )
    if (rm.assignment < 0).any():
        raise RegionMapError("region map has unmapped cells")
    return np.bincount(
        rm.assignment.ravel(), weights=heat.ravel(), minlength=rm.region_count
    )


def block_region_map(grid: GridSpec, block_rows: int, block_cols: int) -> RegionMap:
    """Coarsen a grid into rectangular blocks of ``block_rows x block_cols`` cells.

    Region ids are row-major over the block grid, so a ``30x30`` grid with
    3x3 blocks yields 100 regions arranged 10x10.
    """
    if grid.rows % block_rows or grid.cols % block_cols:
        raise ValueError(
            f"{grid.rows}x{grid.cols} grid not divisible into "
            f"{block_rows}x{block_cols} blocks"
        )
    n_block_cols = grid.cols // block_cols
    r = np.arange(grid.rows) // block_rows
    c = np.arange(grid.cols) // block_cols
    assignment = r[:, None] * n_block_cols + c[None, :]
    return RegionMap(assignment.astype(np.int64), (grid.rows // block_rows) * n_block_cols)


def haversine(a: Location, b: Location) -> float:
    """Great-circle distance in meters (spherical earth, R = 6,371 km)."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_arrays(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorized haversine over numpy arrays, in meters."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=np.float64))
                              for x in (lat1, lon1, lat2, lon2))
    h = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))
