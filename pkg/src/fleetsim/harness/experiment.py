"""End-to-end experiment orchestration: models, policies, episodes, reports.

A run consumes one city directory (trips, roads, partitions), trains or
loads the shared models (ETA, demand, zone tables, optionally the
Q-network), then simulates independent day episodes (4 a.m. to 4 a.m.)
for the configured policy and writes machine-readable summaries.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .. import demand as demand_mod
from .. import dqn as dqn_mod
from .. import eta as eta_mod
from .. import rhc as rhc_mod
from ..clock import Clock
from ..geo import GridSpec, Location, RegionMap, cell_arrays
from ..roadgraph import load_edge_list
from ..sim import RideRequest, Simulation
from .config import ConfigError, ExperimentConfig
from .ingest import ingest_trips
from .synth import SynthCity, synth_city, write_city

log = logging.getLogger(__name__)

METRIC_NAMES = ("reject_rate", "mean_wait_minutes", "idle_cruise_per_accepted")
SUMMARY_COLUMNS = (
    "policy", "seed", "day", "total_requests", "rejects", "reject_rate",
    "accepted", "mean_wait_minutes", "idle_cruise_per_accepted",
    "utilization_mean", "utilization_min",
)


@dataclass
class City:
    grid: GridSpec
    graph: object
    regions: RegionMap
    zones: RegionMap
    requests: list[RideRequest]


def city_from_synth(sc: SynthCity) -> City:
    requests = [RideRequest(rid=i, minute=tr.pickup_minute, pickup=tr.pickup,
                            dropoff=tr.dropoff, trip_minutes=tr.duration_minutes,
                            distance_km=tr.distance_km)
                for i, tr in enumerate(sc.trips)]
    return City(sc.grid, sc.graph, sc.regions, sc.zones, requests)


def load_city(cfg: ExperimentConfig, data_dir=None) -> City:
    base = Path(data_dir or cfg.data_dir)
    grid = GridSpec(rows=cfg.fine_rows, cols=cfg.fine_cols, cell_size=cfg.cell_size_m,
                    origin=Location(cfg.origin_lat, cfg.origin_lon))
    epoch = datetime.fromisoformat(cfg.epoch_date)
    requests, report = ingest_trips(base / "trips.csv", grid, epoch)
    log.info("ingested %d trips (%d dropped out-of-bounds, %d non-positive)",
             report.kept, report.dropped_bounds, report.dropped_duration)
    graph = load_edge_list(base / "roads.txt")
    regions = RegionMap.from_csv(base / "regions.csv", grid.rows, grid.cols)
    zones = RegionMap.from_csv(base / "zones.csv", grid.rows, grid.cols)
    return City(grid, graph, regions, zones, requests)


# --- model training --------------------------------------------------------

def eta_training_arrays(requests: list[RideRequest], cfg: ExperimentConfig):
    feats = np.empty((len(requests), eta_mod.FEATURE_COUNT))
    target = np.empty(len(requests))
    for i, r in enumerate(requests):
        feats[i] = eta_mod.build_eta_features(r.pickup, r.dropoff,
                                              Clock(r.minute, cfg.epoch_dow),
                                              r.distance_km)
        target[i] = r.trip_minutes
    return feats, target


def demand_slot_series(requests: list[RideRequest], grid: GridSpec,
                       total_minutes: float, epoch_dow: int):
    n_slots = int(total_minutes // 30)
    slots = np.zeros((n_slots,) + grid.shape)
    lats = np.array([r.pickup.lat for r in requests])
    lons = np.array([r.pickup.lon for r in requests])
    rows, cols = cell_arrays(lats, lons, grid)
    for r, (row, col) in zip(requests, zip(rows, cols)):
        k = int(r.minute // 30)
        if 0 <= k < n_slots:
            slots[k, row, col] += 1
    clocks = [Clock(k * 30.0, epoch_dow) for k in range(n_slots)]
    return slots, clocks


def zone_trip_arrays(requests: list[RideRequest], zones: RegionMap,
                     grid: GridSpec, epoch_dow: int):
    lats_o = np.array([r.pickup.lat for r in requests])
    lons_o = np.array([r.pickup.lon for r in requests])
    lats_d = np.array([r.dropoff.lat for r in requests])
    lons_d = np.array([r.dropoff.lon for r in requests])
    ro, co = cell_arrays(lats_o, lons_o, grid)
    rd, cd = cell_arrays(lats_d, lons_d, grid)
    origin = zones.assignment[ro, co]
    dest = zones.assignment[rd, cd]
    clocks = [Clock(r.minute, epoch_dow) for r in requests]
    dow = np.array([c.dow_index for c in clocks])
    hour = np.array([c.hour_index for c in clocks])
    minutes = np.array([r.trip_minutes for r in requests])
    return origin, dest, dow, hour, minutes


@dataclass
class ModelBundle:
    eta_model: eta_mod.EtaModel
    demand_model: demand_mod.DemandModel
    historical: demand_mod.HistoricalAverageDemand
    trip_times: rhc_mod.TripTimeTable
    destinations: rhc_mod.DestDistribution
    metrics: dict


def model_paths(cfg: ExperimentConfig) -> dict:
    base = Path(cfg.out_dir) / "models"
    return {
        "eta": base / "eta.json",
        "demand": base / "demand.json",
        "tau": base / "tau.csv",
        "prob": base / "prob.csv",
        "metrics": base / "metrics.json",
        "historical": base / "historical.npz",
        "qnet": base / "qnet.json",
        "dqn_log": base / "dqn_training_log.csv",
    }


def train_eta_model(cfg: ExperimentConfig, training_city: City):
    """Fit and persist the ETA perceptron; returns (model, metrics)."""
    paths = model_paths(cfg)
    paths["eta"].parent.mkdir(parents=True, exist_ok=True)
    feats, target = eta_training_arrays(training_city.requests, cfg)
    model, tr_rmse, va_rmse = eta_mod.train_eta(
        feats, target, seed=cfg.train_seed, epochs=cfg.eta_epochs, lr=cfg.eta_lr)
    tr_idx, va_idx = eta_mod.split_indices(len(target), cfg.train_seed)
    metrics = {
        "eta_train_rmse": tr_rmse,
        "eta_val_rmse": va_rmse,
        "eta_mean_baseline_rmse": eta_mod.mean_predictor_rmse(
            target[tr_idx], target[va_idx]),
    }
    model.save(paths["eta"])
    return model, metrics


def train_demand_model(cfg: ExperimentConfig, training_city: City):
    """Fit and persist the demand network plus the historical fallback.

    Returns (model, historical, metrics); the fallback is fit on the
    training split only, making it a fair baseline and a cold-start
    predictor.
    """
    paths = model_paths(cfg)
    paths["demand"].parent.mkdir(parents=True, exist_ok=True)
    total_minutes = cfg.train_days * 1440.0
    slots, clocks = demand_slot_series(training_city.requests, training_city.grid,
                                       total_minutes, cfg.epoch_dow)
    model, tr_rmse, va_rmse = demand_mod.train_demand(
        slots, clocks, seed=cfg.train_seed, epochs=cfg.demand_epochs,
        lr=cfg.demand_lr)
    n = slots.shape[0] - 2
    split = 2 + max(1, int(round(n * 0.7)))
    baseline = demand_mod.HistoricalAverageDemand(training_city.grid.shape)
    baseline.fit(slots[:split], clocks[:split])
    errs = [(baseline.predict(clocks[i]) - slots[i]) ** 2
            for i in range(split, slots.shape[0])]
    metrics = {
        "demand_train_rmse": tr_rmse,
        "demand_val_rmse": va_rmse,
        "demand_historical_baseline_rmse": float(np.sqrt(np.mean(errs))),
    }
    model.save(paths["demand"])
    baseline.save(paths["historical"])
    return model, baseline, metrics


def build_zone_tables(cfg: ExperimentConfig, training_city: City):
    """Estimate and persist the trip-time and destination tables."""
    paths = model_paths(cfg)
    paths["tau"].parent.mkdir(parents=True, exist_ok=True)
    origin, dest, dow, hour, minutes = zone_trip_arrays(
        training_city.requests, training_city.zones, training_city.grid, cfg.epoch_dow)
    dist = rhc_mod.zone_centroid_distances(training_city.zones, training_city.grid)
    trip_times, destinations = rhc_mod.estimate_tables(
        origin, dest, dow, hour, minutes, training_city.zones.region_count,
        centroid_dist_m=dist)
    rhc_mod.save_tables(trip_times, destinations, paths["tau"], paths["prob"])
    return trip_times, destinations


def train_models(cfg: ExperimentConfig, training_city: City) -> ModelBundle:
    """Fit ETA, demand and zone tables on the training city and persist them."""
    paths = model_paths(cfg)
    eta_model, eta_metrics = train_eta_model(cfg, training_city)
    demand_model, historical, demand_metrics = train_demand_model(cfg, training_city)
    trip_times, destinations = build_zone_tables(cfg, training_city)
    metrics = {**eta_metrics, **demand_metrics}
    with open(paths["metrics"], "w") as fh:
        json.dump(metrics, fh, indent=2)
    return ModelBundle(eta_model, demand_model, historical, trip_times,
                       destinations, metrics)


def load_models(cfg: ExperimentConfig, zone_count: int) -> ModelBundle:
    paths = model_paths(cfg)
    eta_model = eta_mod.EtaModel.load(paths["eta"])
    demand_model = demand_mod.DemandModel.load(paths["demand"])
    historical = demand_mod.HistoricalAverageDemand.load(paths["historical"])
    trip_times, destinations = rhc_mod.load_tables(paths["tau"], paths["prob"], zone_count)
    metrics = {}
    if paths["metrics"].exists():
        metrics = json.loads(paths["metrics"].read_text())
    return ModelBundle(eta_model, demand_model, historical, trip_times,
                       destinations, metrics)


def training_city(cfg: ExperimentConfig) -> City:
    return city_from_synth(synth_city(cfg, cfg.train_seed, cfg.train_days))


def ensure_models(cfg: ExperimentConfig) -> ModelBundle:
    paths = model_paths(cfg)
    if all(paths[k].exists() for k in ("eta", "demand", "tau", "prob", "historical")):
        zone_count = (cfg.fine_rows // cfg.zone_block) * (cfg.fine_cols // cfg.zone_block)
        return load_models(cfg, zone_count)
    return train_models(cfg, training_city(cfg))


# --- demand predictors -----------------------------------------------------

class ModelDemandPredictor:
    """Next-30-minute fine heat map from the trained network.

    For the first hour of an episode the two trailing demand slots are
    not yet complete and the masking rule would blank the map, so a
    historical-average fallback covers the cold start.  With
    ``floor_with_history`` the map is elementwise floored at the
    historical average: the masking rule predicts exactly zero in cells
    without recent pickups, a known underestimate that would otherwise
    hide sparse-area shortages from the zone optimizer.
    """

    def __init__(self, model: demand_mod.DemandModel,
                 fallback: demand_mod.HistoricalAverageDemand | None = None,
                 cold_start_minutes: float = 60.0,
                 floor_with_history: bool = False):
        self.model = model
        self.fallback = fallback
        self.cold_start_minutes = cold_start_minutes
        self.floor_with_history = floor_with_history

    def __call__(self, view):
        if self.fallback is not None and view.t < self.cold_start_minutes:
            return self.fallback.predict(view.clock)
        planes = demand_mod.build_demand_input(view.heat_prev1, view.heat_prev2,
                                               view.clock)
        heat = self.model.predict(planes)
        if self.floor_with_history and self.fallback is not None:
            heat = np.maximum(heat, self.fallback.predict(view.clock))
        return heat


class HistoricalDemandPredictor:
    def __init__(self, baseline: demand_mod.HistoricalAverageDemand):
        self.baseline = baseline

    def __call__(self, view):
        return self.baseline.predict(view.clock)


# --- policies and episodes ---------------------------------------------------

def region_shape(cfg: ExperimentConfig) -> tuple[int, int]:
    return (cfg.fine_rows // cfg.region_block, cfg.fine_cols // cfg.region_block)


def make_policy(cfg: ExperimentConfig, policy_name: str, city: City,
                bundle: ModelBundle, qnet: dqn_mod.QNetwork | None = None):
    if policy_name == "none":
        return None
    predictor = ModelDemandPredictor(bundle.demand_model, bundle.historical)
    if policy_name == "rhc":
        rhc_predictor = ModelDemandPredictor(bundle.demand_model, bundle.historical,
                                             floor_with_history=True)
        return rhc_mod.RhcPolicy(
            zones=city.zones, trip_times=bundle.trip_times,
            destinations=bundle.destinations, demand_predictor=rhc_predictor,
            future_demand=bundle.historical.predict,
            reject_penalty=cfg.rhc_reject_penalty, discount=cfg.rhc_discount,
            slot_minutes=cfg.rhc_slot_minutes, horizon=cfg.rhc_horizon)
    if policy_name in ("dqn", "dqn_star"):
        if qnet is None:
            raise ConfigError("a trained Q-network is required for DQN policies")
        config = dqn_mod.DqnConfig(
            reject_weight=cfg.dqn_reject_weight, discount=cfg.dqn_discount,
            decision_interval=cfg.dqn_decision_interval,
            cycle=1 if policy_name == "dqn" else cfg.rhc_slot_minutes,
            train=False, seed=cfg.seed)
        return dqn_mod.DqnPolicy(qnet, city.regions, region_shape(cfg),
                                 predictor, config)
    raise ConfigError(f"unknown policy {policy_name!r}")


def day_window(cfg: ExperimentConfig, day: int) -> tuple[float, float]:
    start = day * 1440.0 + cfg.day_start_hour * 60.0
    return start, start + 1440.0


def episode_requests(requests: list[RideRequest], start: float, end: float
                     ) -> list[RideRequest]:
    out = []
    for r in requests:
        if start <= r.minute < end:
            out.append(RideRequest(rid=r.rid, minute=r.minute - start,
                                   pickup=r.pickup, dropoff=r.dropoff,
                                   trip_minutes=r.trip_minutes,
                                   distance_km=r.distance_km))
    return out


def run_episode(cfg: ExperimentConfig, city: City, bundle: ModelBundle,
                policy_name: str, day: int, qnet=None):
    start, end = day_window(cfg, day)
    reqs = episode_requests(city.requests, start, end)
    policy = make_policy(cfg, policy_name, city, bundle, qnet)
    sim = Simulation(city.grid, city.graph, bundle.eta_model, reqs,
                     n_vehicles=cfg.vehicles, policy=policy,
                     clock0=Clock(start, cfg.epoch_dow),
                     warmup=cfg.warmup_minutes,
                     match_radius_m=cfg.match_radius_m,
                     idle_window=cfg.idle_window_minutes)
    metrics = sim.run(1440)
    from ..sim import finalize_metrics

    return metrics, finalize_metrics(metrics)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_summary_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.get(col)) for col in SUMMARY_COLUMNS])


def emit_plot_data(path, policy: str, seed: int, day_reports: list[dict]) -> None:
    """Hourly time series: one row per simulated hour per metric."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "seed", "day", "hour", "metric", "value"])
        for day, report in enumerate(day_reports):
            for bucket in report["hourly"]:
                for metric in METRIC_NAMES:
                    w.writerow([policy, seed, day, bucket["hour"], metric,
                                _fmt(bucket.get(metric))])


def run_experiment(cfg: ExperimentConfig, city: City | None = None,
                   bundle: ModelBundle | None = None, qnet=None) -> dict:
    """Simulate all configured days; write summary and plot CSVs.

    Returns a dict with per-day reports, the aggregate report, and file
    paths.  Identical configurations and seeds produce byte-identical
    output files.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if city is None:
        if (Path(cfg.data_dir) / "trips.csv").exists():
            city = load_city(cfg)
        else:
            city = city_from_synth(synth_city(cfg, cfg.seed, cfg.days))
    if bundle is None:
        bundle = ensure_models(cfg)
    if cfg.policy in ("dqn", "dqn_star") and qnet is None:
        qnet_path = model_paths(cfg)["qnet"]
        if not qnet_path.exists():
            raise ConfigError("no trained Q-network found; run train-dqn first")
        qnet, _, _ = dqn_mod.QNetwork.load(qnet_path)

    day_reports = []
    rows = []
    agg_requests = agg_rejects = agg_accepted = 0
    agg_wait = agg_cruise = 0.0
    agg_occupied = np.zeros(cfg.vehicles)
    agg_elapsed = 0
    for day in range(cfg.days):
        metrics, report = run_episode(cfg, city, bundle, cfg.policy, day, qnet)
        day_reports.append(report)
        rows.append({
            "policy": cfg.policy, "seed": cfg.seed, "day": day,
            "total_requests": report["total_requests"],
            "rejects": report["rejects"],
            "reject_rate": report["reject_rate"],
            "accepted": report["accepted"],
            "mean_wait_minutes": report["mean_wait_minutes"],
            "idle_cruise_per_accepted": report["idle_cruise_per_accepted"],
            "utilization_mean": report["utilization_mean"],
            "utilization_min": report["utilization_min"],
        })
        agg_requests += report["total_requests"]
        agg_rejects += report["rejects"]
        agg_accepted += report["accepted"]
        agg_wait += metrics.wait_sum
        agg_cruise += metrics.cruise_sum
        agg_occupied += metrics.occupied_minutes
        agg_elapsed += metrics.elapsed_minutes

    util = agg_occupied / agg_elapsed if agg_elapsed else None
    aggregate = {
        "policy": cfg.policy, "seed": cfg.seed, "day": "all",
        "total_requests": agg_requests,
        "rejects": agg_rejects,
        "reject_rate": (agg_rejects / agg_requests) if agg_requests else None,
        "accepted": agg_accepted,
        "mean_wait_minutes": (agg_wait / agg_accepted) if agg_accepted else None,
        "idle_cruise_per_accepted": (agg_cruise / agg_accepted) if agg_accepted else None,
        "utilization_mean": float(util.mean()) if util is not None else None,
        "utilization_min": float(util.min()) if util is not None else None,
    }
    rows.append(aggregate)

    summary_path = out / f"summary_{cfg.policy}_{cfg.seed}.csv"
    plot_path = out / f"plot_{cfg.policy}_{cfg.seed}.csv"
    write_summary_csv(summary_path, rows)
    emit_plot_data(plot_path, cfg.policy, cfg.seed, day_reports)
    return {
        "rows": rows,
        "aggregate": aggregate,
        "day_reports": day_reports,
        "summary_path": str(summary_path),
        "plot_path": str(plot_path),
    }


# --- DQN training ------------------------------------------------------------

def train_dqn(cfg: ExperimentConfig, city: City | None = None,
              bundle: ModelBundle | None = None, steps: int | None = None):
    """Train the Q-network inside the simulator on the training city.

    One continuous run starting at the configured day-start hour; a
    training step follows every simulated minute after warmup.  Returns
    (QNetwork, training log rows) and persists both.
    """
    steps = steps or cfg.dqn_train_steps
    if city is None:
        city = training_city(cfg)
    if bundle is None:
        bundle = ensure_models(cfg)
    schedules = dqn_mod.Schedules(
        eps_ramp=cfg.dqn_eps_ramp, alpha_ramp=cfg.dqn_alpha_ramp,
        total_steps=steps, sync_period=cfg.dqn_sync_period)
    config = dqn_mod.DqnConfig(
        reject_weight=cfg.dqn_reject_weight, discount=cfg.dqn_discount,
        decision_interval=cfg.dqn_decision_interval, cycle=1, train=True,
        seed=cfg.train_seed, lr=cfg.dqn_lr, batch_size=cfg.dqn_batch,
        buffer_capacity=cfg.dqn_buffer, schedules=schedules)
    net = dqn_mod.QNetwork.create(np.random.default_rng(cfg.train_seed))
    predictor = ModelDemandPredictor(bundle.demand_model, bundle.historical)
    policy = dqn_mod.DqnPolicy(net, city.regions, region_shape(cfg), predictor, config)

    start = cfg.day_start_hour * 60.0
    total_minutes = cfg.warmup_minutes + steps
    # slice generously so fleet placement always has enough requests even
    # for very short training runs
    span = max(total_minutes + 1.0, 1440.0)
    reqs = episode_requests(city.requests, start, start + span)
    if len(reqs) < cfg.vehicles:
        raise ConfigError("training city too small for the configured fleet")
    sim = Simulation(city.grid, city.graph, bundle.eta_model, reqs,
                     n_vehicles=cfg.vehicles, policy=policy,
                     clock0=Clock(start, cfg.epoch_dow),
                     warmup=cfg.warmup_minutes,
                     match_radius_m=cfg.match_radius_m,
                     idle_window=cfg.idle_window_minutes)
    for minute in range(total_minutes):
        sim.step_minute()
        if minute >= cfg.warmup_minutes:
            policy.train_tick()

    paths = model_paths(cfg)
    paths["qnet"].parent.mkdir(parents=True, exist_ok=True)
    net.save(paths["qnet"], extra={"steps": steps})
    dqn_mod.write_training_log(paths["dqn_log"], policy.training_log)
    return net, policy.training_log
