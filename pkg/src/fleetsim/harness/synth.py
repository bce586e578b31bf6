"""Synthetic desk-scale city: trips, road network and partitions.

Demand is a Poisson process over fine-grid cells whose intensity mixes a
uniform floor with a handful of hotspots on daily commute, business and
nightlife profiles (weekends damp the commute peaks and boost
nightlife).  Destinations mix uniform scatter with hour-dependent pulls
toward the hotspots, so the fleet drains away from demand unless a
dispatch policy intervenes.  Everything is a deterministic function of
the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from ..geo import GridSpec, Location, RegionMap, block_region_map, center_of, haversine
from ..roadgraph import RoadGraph, build_graph, save_edge_list
from .config import ExperimentConfig

SLOT_MINUTES = 30


@dataclass(frozen=True)
class TripRecord:
    pickup_minute: float
    pickup: Location
    dropoff: Location
    duration_minutes: float
    distance_km: float


@dataclass
class SynthCity:
    grid: GridSpec
    graph: RoadGraph
    regions: RegionMap
    zones: RegionMap
    trips: list[TripRecord]


def _hour_bump(hour: float, center: float, width: float) -> float:
    # circular distance on the 24-hour clock
    d = min(abs(hour - center), 24.0 - abs(hour - center))
    return math.exp(-0.5 * (d / width) ** 2)


_HOTSPOTS = (
    # name, fractional (row, col), sigma in grid fraction
    ("downtown", 0.50, 0.52, 0.075),
    ("res_a", 0.17, 0.18, 0.10),
    ("res_b", 0.80, 0.74, 0.10),
    ("night", 0.28, 0.80, 0.06),
)


def _origin_profile(name: str, hour: float, weekend: bool) -> float:
    if name == "downtown":
        v = 0.25 + 1.2 * _hour_bump(hour, 13.0, 3.5) + 0.8 * _hour_bump(hour, 18.0, 1.5)
        return v * (0.7 if weekend else 1.0)
    if name in ("res_a", "res_b"):
        v = 0.2 + 1.5 * _hour_bump(hour, 8.0, 1.5) + 0.9 * _hour_bump(hour, 19.5, 2.0)
        return v * (0.55 if weekend else 1.0)
    v = 0.1 + 1.6 * _hour_bump(hour, 22.5, 2.0) + 0.7 * _hour_bump(hour, 1.0, 1.5)
    return v * (1.4 if weekend else 1.0)


def _dest_weights(hour: float) -> np.ndarray:
    """Hotspot attraction weights by hour (downtown, res_a, res_b, night)."""
    if 5.0 <= hour < 11.0:
        return np.array([0.60, 0.14, 0.16, 0.10])
    if 11.0 <= hour < 16.0:
        return np.array([0.40, 0.22, 0.24, 0.14])
    if 16.0 <= hour < 21.0:
        return np.array([0.18, 0.34, 0.36, 0.12])
    return np.array([0.14, 0.38, 0.40, 0.08])


def _hotspot_maps(grid: GridSpec) -> np.ndarray:
    rows = np.arange(grid.rows)[:, None]
    cols = np.arange(grid.cols)[None, :]
    maps = []
    for _, fr, fc, sigma in _HOTSPOTS:
        r0 = fr * (grid.rows - 1)
        c0 = fc * (grid.cols - 1)
        s = sigma * max(grid.rows, grid.cols)
        maps.append(np.exp(-0.5 * (((rows - r0) / s) ** 2 + ((cols - c0) / s) ** 2)))
    return np.stack(maps)


def _slot_rates(grid: GridSpec, cfg: ExperimentConfig) -> np.ndarray:
    """Per-cell demand rate for each (dow, slot-of-day), normalized so a
    weekday totals roughly ``trips_per_day`` requests."""
    spots = _hotspot_maps(grid)
    base = np.full(grid.shape, 0.12 * spots.mean())
    rates = np.zeros((7, 48) + grid.shape)
    for dow in range(7):
        weekend = dow >= 5
        for slot in range(48):
            hour = slot * 0.5
            heat = base.copy()
            for k, (name, *_rest) in enumerate(_HOTSPOTS):
                heat += spots[k] * _origin_profile(name, hour, weekend)
            rates[dow, slot] = heat
    weekday_total = rates[0].sum()
    return rates * (cfg.trips_per_day / weekday_total)


def _speed_kmh(hour: float, cfg: ExperimentConfig) -> float:
    slow = _hour_bump(hour, 8.5, 1.5) + _hour_bump(hour, 17.5, 2.0)
    return cfg.synth_speed_kmh * (1.0 - 0.25 * min(1.0, slow))


def build_road_grid(grid: GridSpec) -> RoadGraph:
    """4-connected bidirectional road graph over the fine cell centers."""
    nodes = {}
    for r in range(grid.rows):
        for c in range(grid.cols):
            nodes[r * grid.cols + c] = center_of((r, c), grid)
    edges = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            nid = r * grid.cols + c
            for r2, c2 in ((r + 1, c), (r, c + 1)):
                if r2 < grid.rows and c2 < grid.cols:
                    nid2 = r2 * grid.cols + c2
                    d = haversine(nodes[nid], nodes[nid2])
                    edges.append((nid, nid2, d))
                    edges.append((nid2, nid, d))
    return build_graph(nodes, edges)


def _activity_level(rng, n_slots: int, sigma: float = 0.22,
                    corr_slots: float = 6.0) -> np.ndarray:
    """Smooth day-to-day demand-level swings (AR(1) over 30-minute slots).

    Real workloads fluctuate around their weekly profile with a level
    that persists for hours; the trailing heat maps reveal it while
    per-(dow, hour) averages cannot.
    """
    rho = math.exp(-1.0 / corr_slots)
    g = np.empty(n_slots)
    g[0] = rng.normal(0.0, sigma)
    innovation = sigma * math.sqrt(1.0 - rho * rho)
    for k in range(1, n_slots):
        g[k] = rho * g[k - 1] + rng.normal(0.0, innovation)
    return np.exp(g)


def synth_city(cfg: ExperimentConfig, seed: int, days: int) -> SynthCity:
    """Generate a fully deterministic city and trip workload."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(rows=cfg.fine_rows, cols=cfg.fine_cols, cell_size=cfg.cell_size_m,
                    origin=Location(cfg.origin_lat, cfg.origin_lon))
    rates = _slot_rates(grid, cfg)
    level = _activity_level(rng, days * 48)
    spots = _hotspot_maps(grid)
    spot_centers = [((fr * (grid.rows - 1)), (fc * (grid.cols - 1)))
                    for _, fr, fc, _ in _HOTSPOTS]
    spot_sigma = [sigma * max(grid.rows, grid.cols) for *_x, sigma in _HOTSPOTS]

    trips: list[TripRecord] = []
    for day in range(days):
        dow = (cfg.epoch_dow + day) % 7
        for slot in range(48):
            hour = slot * 0.5
            counts = rng.poisson(rates[dow, slot] * level[day * 48 + slot])
            cells = np.argwhere(counts > 0)
            for r, c in cells:
                for _ in range(int(counts[r, c])):
                    minute = day * 1440.0 + slot * SLOT_MINUTES + rng.uniform(0, SLOT_MINUTES)
                    pickup = Location(
                        grid.origin.lat + (r + rng.random()) * grid.d_lat,
                        grid.origin.lon + (c + rng.random()) * grid.d_lon,
                    )
                    if rng.random() < 0.45:
                        dr = rng.uniform(0, grid.rows)
                        dc = rng.uniform(0, grid.cols)
                    else:
                        k = int(rng.choice(4, p=_dest_weights(hour)))
                        r0, c0 = spot_centers[k]
                        dr = np.clip(r0 + rng.normal(0, spot_sigma[k]) + rng.random(),
                                     0.0, grid.rows - 1e-6)
                        dc = np.clip(c0 + rng.normal(0, spot_sigma[k]) + rng.random(),
                                     0.0, grid.cols - 1e-6)
                    dropoff = Location(grid.origin.lat + dr * grid.d_lat,
                                       grid.origin.lon + dc * grid.d_lon)
                    straight = haversine(pickup, dropoff)
                    if straight < 100.0:
                        continue  # hop too short to be a recorded taxi trip
                    dist_km = straight * 1.25 / 1000.0
                    speed = _speed_kmh(hour, cfg)
                    minutes = dist_km / speed * 60.0 * float(np.exp(
                        rng.normal(0.0, cfg.synth_noise)))
                    trips.append(TripRecord(minute, pickup, dropoff,
                                            max(1.0, minutes), dist_km))
    trips.sort(key=lambda tr: tr.pickup_minute)
    regions = block_region_map(grid, cfg.region_block, cfg.region_block)
    zones = block_region_map(grid, cfg.zone_block, cfg.zone_block)
    return SynthCity(grid=grid, graph=build_road_grid(grid), regions=regions,
                     zones=zones, trips=trips)


def _iso(epoch: datetime, minute: float) -> str:
    return (epoch + timedelta(seconds=round(minute * 60.0))).isoformat(sep=" ")


def write_city(city: SynthCity, cfg: ExperimentConfig, out_dir) -> dict:
    """Write trips.csv, roads.txt and the two partition files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    epoch = datetime.fromisoformat(cfg.epoch_date)
    trips_path = out / "trips.csv"
    with open(trips_path, "w", newline="") as fh:
        fh.write("pickup_datetime,dropoff_datetime,pickup_lat,pickup_lon,"
                 "dropoff_lat,dropoff_lon,trip_distance_km\n")
        for tr in city.trips:
            fh.write(",".join([
                _iso(epoch, tr.pickup_minute),
                _iso(epoch, tr.pickup_minute + tr.duration_minutes),
                repr(float(tr.pickup.lat)), repr(float(tr.pickup.lon)),
                repr(float(tr.dropoff.lat)), repr(float(tr.dropoff.lon)),
                repr(float(tr.distance_km)),
            ]) + "\n")
    save_edge_list(city.graph, out / "roads.txt")
    city.regions.to_csv(out / "regions.csv")
    city.zones.to_csv(out / "zones.csv")
    return {
        "trips": str(trips_path),
        "roads": str(out / "roads.txt"),
        "regions": str(out / "regions.csv"),
        "zones": str(out / "zones.csv"),
        "n_trips": len(city.trips),
    }
