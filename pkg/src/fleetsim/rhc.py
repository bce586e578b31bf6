"""Model-based centralized dispatch: receding-horizon control over a zone LP.

Each invocation predicts zone-level supply dynamics over a short horizon,
solves a linear program for fractional zone-to-zone dispatch counts,
rounds the first slot's plan, and greedily maps dispatch units onto
concrete vehicles and fine-grid cells using the demand-supply mismatch.

The supply recursion keeps the printed index conventions of the source
dynamics: demand in slot k+1 is served from supply standing at slot k,
dispatch moves decided in slot k land in slot k+1, and vehicles dropping
off during slot k join the idle pool at slot k+1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .geo import GridSpec, RegionMap, aggregate_to_regions, center_of, haversine
from .lp import LpProblem, LpSolution, solve
from .sim import DispatchOrder

log = logging.getLogger(__name__)

DEFAULT_SLOT_MINUTES = 15.0
DEFAULT_HORIZON = 3
DEFAULT_REJECT_PENALTY = 20.0
DEFAULT_DISCOUNT = 0.99
FALLBACK_SPEED_KMH = 25.0


# --- historical tables -----------------------------------------------------

@dataclass
class TripTimeTable:
    """Expected zone-to-zone minutes per (day-of-week, hour)."""

    minutes: np.ndarray  # (7, 24, M, M)

    def at(self, dow: int, hour: int) -> np.ndarray:
        return self.minutes[dow, hour]


@dataclass
class DestDistribution:
    """Row-stochastic destination probabilities per (day-of-week, hour)."""

    prob: np.ndarray  # (7, 24, M, M)

    def at(self, dow: int, hour: int) -> np.ndarray:
        return self.prob[dow, hour]


def zone_centroid_distances(rm: RegionMap, grid: GridSpec) -> np.ndarray:
    """Pairwise great-circle distances between zone centroids, meters."""
    m = rm.region_count
    lat_sum = np.zeros(m)
    lon_sum = np.zeros(m)
    count = np.zeros(m)
    for r in range(grid.rows):
        for c in range(grid.cols):
            z = rm.assignment[r, c]
            loc = center_of((r, c), grid)
            lat_sum[z] += loc.lat
            lon_sum[z] += loc.lon
            count[z] += 1
    lats = lat_sum / np.maximum(count, 1)
    lons = lon_sum / np.maximum(count, 1)
    out = np.zeros((m, m))
    from .geo import Location, haversine_arrays

    for i in range(m):
        out[i] = haversine_arrays(lats[i], lons[i], lats, lons)
    return out


def estimate_tables(origin_zone, dest_zone, dow_idx, hour_idx, minutes,
                    zone_count: int, centroid_dist_m: np.ndarray | None = None,
                    fallback_speed_kmh: float = FALLBACK_SPEED_KMH
                    ) -> tuple[TripTimeTable, DestDistribution]:
    """Histogram trip records into travel-time and destination tables.

    Trip times are arithmetic means of observed durations per
    (dow, hour, origin, dest); missing entries fall back to centroid
    distance at a conservative urban speed.  Destination rows fall back
    to the origin's all-hours marginal, then to uniform.
    """
    m = zone_count
    origin_zone = np.asarray(origin_zone, dtype=np.int64)
    dest_zone = np.asarray(dest_zone, dtype=np.int64)
    dow_idx = np.asarray(dow_idx, dtype=np.int64)
    hour_idx = np.asarray(hour_idx, dtype=np.int64)
    minutes = np.asarray(minutes, dtype=np.float64)

    time_sum = np.zeros((7, 24, m, m))
    counts = np.zeros((7, 24, m, m))
    np.add.at(time_sum, (dow_idx, hour_idx, origin_zone, dest_zone), minutes)
    np.add.at(counts, (dow_idx, hour_idx, origin_zone, dest_zone), 1.0)

    if centroid_dist_m is None:
        default = np.zeros((m, m))
    else:
        default = (np.asarray(centroid_dist_m) / 1000.0) / fallback_speed_kmh * 60.0
    tau = np.where(counts > 0, time_sum / np.maximum(counts, 1.0),
                   np.broadcast_to(default, (7, 24, m, m)))

    marginal = counts.sum(axis=(0, 1))  # (m, m) over all hours
    prob = np.empty((7, 24, m, m))
    uniform = np.full(m, 1.0 / m)
    marg_rows = np.where(marginal.sum(axis=1, keepdims=True) > 0,
                         marginal / np.maximum(marginal.sum(axis=1, keepdims=True), 1e-12),
                         uniform)
    for d in range(7):
        for h in range(24):
            rows = counts[d, h]
            row_sums = rows.sum(axis=1, keepdims=True)
            prob[d, h] = np.where(row_sums > 0, rows / np.maximum(row_sums, 1e-12),
                                  marg_rows)
    return TripTimeTable(tau), DestDistribution(prob)


def save_tables(tt: TripTimeTable, dd: DestDistribution, tau_path, prob_path) -> None:
    m = tt.minutes.shape[-1]
    with open(tau_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dow", "hour", "origin", "dest", "minutes"])
        for d in range(7):
            for h in range(24):
                for i in range(m):
                    for j in range(m):
                        w.writerow([d, h, i, j, repr(float(tt.minutes[d, h, i, j]))])
    with open(prob_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dow", "hour", "origin", "dest", "prob"])
        for d in range(7):
            for h in range(24):
                for i in range(m):
                    for j in range(m):
                        w.writerow([d, h, i, j, repr(float(dd.prob[d, h, i, j]))])


def load_tables(tau_path, prob_path, zone_count: int) -> tuple[TripTimeTable, DestDistribution]:
    tau = np.zeros((7, 24, zone_count, zone_count))
    with open(tau_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            tau[int(rec["dow"]), int(rec["hour"]), int(rec["origin"]), int(rec["dest"])] = float(rec["minutes"])
    prob = np.zeros((7, 24, zone_count, zone_count))
    with open(prob_path, newline="") as fh:
        for rec in csv.DictReader(fh):
            prob[int(rec["dow"]), int(rec["hour"]), int(rec["origin"]), int(rec["dest"])] = float(rec["prob"])
    return TripTimeTable(tau), DestDistribution(prob)


# --- supply dynamics -------------------------------------------------------

def predict_supply(x0: np.ndarray, sched: np.ndarray, wbar: np.ndarray,
                   tau_slots, p_slots, u_slots=None,
                   slot_minutes: float = DEFAULT_SLOT_MINUTES) -> np.ndarray:
    """Roll the supply recursion forward for slots 1..T with fixed dispatches.

    ``x0`` is the standing idle count, ``sched[k]`` the occupied-now
    vehicles dropping off during relative slot k, ``wbar[k]`` predicted
    demand, ``tau_slots[k]``/``p_slots[k]`` the per-slot travel-time and
    destination matrices, and ``u_slots[k]`` an optional fixed dispatch
    matrix per slot.  Returns an array of shape (T, M).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    wbar = np.asarray(wbar, dtype=np.float64)
    sched = np.asarray(sched, dtype=np.float64)
    horizon = wbar.shape[0] - 1
    m = x0.shape[0]
    if (x0 < 0).any() or (wbar < 0).any() or (sched < 0).any():
        raise ValueError("supply inputs must be non-negative")

    xs = np.zeros((horizon + 1, m))
    xs[0] = x0
    served = np.zeros((horizon, m))
    for k in range(horizon):
        leftover = np.maximum(xs[k] - wbar[k + 1], 0.0)
        served[k] = np.minimum(wbar[k + 1], xs[k])
        net_u = np.zeros(m)
        if u_slots is not None:
            u = np.asarray(u_slots[k], dtype=np.float64)
            net_u = u.sum(axis=1) - u.sum(axis=0)
        arrivals = np.zeros(m)
        for kp in range(k + 1):
            lag = np.floor(np.asarray(tau_slots[kp]) / slot_minutes).astype(int)
            mask = (lag.T == (k - kp))  # mask[i, j]: trips j -> i landing in slot k
            if mask.any():
                p = np.asarray(p_slots[kp])
                arrivals += ((p.T * mask) * served[kp][None, :]).sum(axis=1)
        xs[k + 1] = leftover - net_u + sched[k] + arrivals
    return xs[1:]


# --- the receding-horizon linear program -----------------------------------

@dataclass
class RhcLpIndex:
    """Column registry for the assembled LP."""

    n_vars: int
    u_cols: dict  # (k, i, j) -> column
    x_cols: dict  # (k, i) -> column, k >= 1
    s_cols: dict  # (k, i) -> column
    m_cols: dict  # (k, i) -> column
    l_cols: dict  # (k, i) -> column


def build_rhc_lp(x0: np.ndarray, sched: np.ndarray, wbar: np.ndarray,
                 tau_slots, p_slots, reject_penalty: float = DEFAULT_REJECT_PENALTY,
                 discount: float = DEFAULT_DISCOUNT,
                 slot_minutes: float = DEFAULT_SLOT_MINUTES) -> tuple[LpProblem, RhcLpIndex]:
    """Assemble the horizon dispatch LP.

    Decision variables are zone-to-zone dispatch counts per slot
    (restricted to pairs reachable within one slot), future supply
    levels, shortage epigraph variables, and a served/leftover split of
    each slot's standing supply.  Served mass redistributes through the
    destination distribution with the travel-time lag; shortages are
    penalized at ``reject_penalty`` per predicted unserved request.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    wbar = np.asarray(wbar, dtype=np.float64)
    sched = np.asarray(sched, dtype=np.float64)
    m = x0.shape[0]
    horizon = wbar.shape[0] - 1
    if sched.shape != (max(horizon, 0), m) and horizon > 0:
        raise ValueError(f"sched shape {sched.shape} != ({horizon}, {m})")

    u_cols: dict = {}
    x_cols: dict = {}
    s_cols: dict = {}
    m_cols: dict = {}
    l_cols: dict = {}
    col = 0
    for k in range(horizon + 1):
        tau = np.asarray(tau_slots[k])
        for i in range(m):
            for j in range(m):
                if i != j and tau[i, j] <= slot_minutes:
                    u_cols[(k, i, j)] = col
                    col += 1
    for k in range(1, horizon + 1):
        for i in range(m):
            x_cols[(k, i)] = col
            col += 1
    for k in range(horizon + 1):
        for i in range(m):
            s_cols[(k, i)] = col
            col += 1
    for k in range(horizon):
        for i in range(m):
            m_cols[(k, i)] = col
            col += 1
    for k in range(horizon):
        for i in range(m):
            l_cols[(k, i)] = col
            col += 1
    n = col

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []

    def add_row(coeffs: dict[int, float], bound: float) -> None:
        row = np.zeros(n)
        for c, v in coeffs.items():
            row[c] += v
        rows.append(row)
        rhs.append(bound)

    def add_eq(coeffs: dict[int, float], bound: float) -> None:
        row = np.zeros(n)
        for c, v in coeffs.items():
            row[c] += v
        eq_rows.append(row)
        eq_rhs.append(bound)

    # dispatch budgets: sum_j u[k,i,j] <= x[k,i]
    for k in range(horizon + 1):
        for i in range(m):
            coeffs = {u_cols[(k, i, j)]: 1.0 for j in range(m) if (k, i, j) in u_cols}
            if not coeffs:
                continue
            if k == 0:
                add_row(coeffs, float(x0[i]))
            else:
                coeffs[x_cols[(k, i)]] = -1.0
                add_row(coeffs, 0.0)

    # shortage epigraph: s[k,i] >= wbar[k,i] - x[k,i]
    for k in range(horizon + 1):
        for i in range(m):
            if k == 0:
                add_row({s_cols[(k, i)]: -1.0}, -(float(wbar[0, i] - x0[i])))
            else:
                add_row({s_cols[(k, i)]: -1.0, x_cols[(k, i)]: -1.0}, -float(wbar[k, i]))

    # served/leftover split of standing supply: m + L = x, m <= next demand
    for k in range(horizon):
        for i in range(m):
            coeffs = {m_cols[(k, i)]: 1.0, l_cols[(k, i)]: 1.0}
            if k == 0:
                add_eq(coeffs, float(x0[i]))
            else:
                coeffs[x_cols[(k, i)]] = -1.0
                add_eq(coeffs, 0.0)
            add_row({m_cols[(k, i)]: 1.0}, float(wbar[k + 1, i]))

    # dynamics: x[k+1] = L[k] - out(u) + in(u) + sched[k] + lagged served arrivals
    for k in range(horizon):
        lags = [np.floor(np.asarray(tau_slots[kp]) / slot_minutes).astype(int)
                for kp in range(k + 1)]
        for i in range(m):
            coeffs: dict[int, float] = {x_cols[(k + 1, i)]: 1.0, l_cols[(k, i)]: -1.0}
            for j in range(m):
                if (k, i, j) in u_cols:
                    coeffs[u_cols[(k, i, j)]] = coeffs.get(u_cols[(k, i, j)], 0.0) + 1.0
                if (k, j, i) in u_cols:
                    coeffs[u_cols[(k, j, i)]] = coeffs.get(u_cols[(k, j, i)], 0.0) - 1.0
            for kp in range(k + 1):
                p = np.asarray(p_slots[kp])
                for j in range(m):
                    if lags[kp][j, i] == k - kp and p[j, i] > 0:
                        c = m_cols[(kp, j)]
                        coeffs[c] = coeffs.get(c, 0.0) - float(p[j, i])
            add_eq(coeffs, float(sched[k, i]))

    objective = np.zeros(n)
    for k in range(horizon + 1):
        g = discount ** k
        for i in range(m):
            objective[s_cols[(k, i)]] -= g * reject_penalty
        tau = np.asarray(tau_slots[k])
        for i in range(m):
            for j in range(m):
                if (k, i, j) in u_cols:
                    objective[u_cols[(k, i, j)]] -= g * float(tau[i, j])

    problem = LpProblem(
        c=objective,
        a_ub=np.asarray(rows) if rows else np.zeros((0, n)),
        b_ub=np.asarray(rhs),
        a_eq=np.asarray(eq_rows) if eq_rows else None,
        b_eq=np.asarray(eq_rhs) if eq_rows else None,
    )
    return problem, RhcLpIndex(n, u_cols, x_cols, s_cols, m_cols, l_cols)


@dataclass
class RhcPlan:
    """LP outcome for the executed slot plus diagnostics."""

    u_star: np.ndarray        # (M, M) fractional dispatch counts, slot 0
    u_rounded: np.ndarray     # (M, M) integer plan, largest-remainder rounding
    objective: float
    status: str
    shortage: np.ndarray      # (T+1, M) LP shortage variables
    x_future: np.ndarray      # (T, M) LP supply for slots 1..T


def round_plan(u: np.ndarray) -> np.ndarray:
    """Largest-remainder rounding per origin row, preserving row budgets.

    Row totals round to the nearest integer; since the LP keeps each row
    sum within the (integer) zone supply, the rounded total can never
    exceed the budget.  Units go to the largest fractional remainders,
    ties to the lowest destination index.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u, dtype=np.int64)
    for i in range(u.shape[0]):
        row = np.maximum(u[i], 0.0)
        total = int(np.floor(row.sum() + 0.5 + 1e-9))
        base = np.floor(row + 1e-9).astype(np.int64)
        deficit = total - int(base.sum())
        out[i] = base
        if deficit > 0:
            rem = row - base
            order = np.lexsort((np.arange(row.size), -rem))
            out[i][order[:deficit]] += 1
    return out


def solve_rhc(x0, sched, wbar, tau_slots, p_slots,
              reject_penalty: float = DEFAULT_REJECT_PENALTY,
              discount: float = DEFAULT_DISCOUNT,
              slot_minutes: float = DEFAULT_SLOT_MINUTES) -> RhcPlan:
    """Build and solve the horizon LP, returning the executed-slot plan."""
    problem, index = build_rhc_lp(x0, sched, wbar, tau_slots, p_slots,
                                  reject_penalty, discount, slot_minutes)
    sol: LpSolution = solve(problem)
    m = np.asarray(x0).shape[0]
    horizon = np.asarray(wbar).shape[0] - 1
    u0 = np.zeros((m, m))
    shortage = np.zeros((horizon + 1, m))
    x_future = np.zeros((horizon, m))
    if sol.status != "optimal":
        log.warning("RHC LP not optimal (%s); dispatching nothing", sol.status)
        return RhcPlan(u0, np.zeros((m, m), dtype=np.int64), float("nan"),
                       sol.status, shortage, x_future)
    for (k, i, j), c in index.u_cols.items():
        if k == 0:
            u0[i, j] = sol.x[c]
    for (k, i), c in index.s_cols.items():
        shortage[k, i] = sol.x[c]
    for (k, i), c in index.x_cols.items():
        x_future[k - 1, i] = sol.x[c]
    plan = RhcPlan(u0, round_plan(u0), sol.objective, sol.status, shortage, x_future)
    check_plan_feasibility(plan, np.asarray(x0, dtype=np.float64),
                           np.asarray(tau_slots[0]), slot_minutes)
    return plan


def check_plan_feasibility(plan: RhcPlan, x0: np.ndarray, tau0: np.ndarray,
                           slot_minutes: float) -> None:
    """Assert the executed plan respects budgets and the one-slot reach rule."""
    row_use = plan.u_star.sum(axis=1)
    if (row_use > x0 + 1e-6).any():
        raise AssertionError(f"LP plan exceeds zone budgets: {row_use} vs {x0}")
    far = tau0 > slot_minutes
    if (np.abs(plan.u_star[far]) > 1e-9).any():
        raise AssertionError("LP plan dispatches beyond the one-slot travel limit")
    if (plan.u_rounded.sum(axis=1) > np.floor(x0 + 0.5 + 1e-9)).any():
        raise AssertionError("rounded plan exceeds zone budgets")


def reward_rhc(u: np.ndarray, x: np.ndarray, wbar: np.ndarray, tau: np.ndarray,
               reject_penalty: float) -> float:
    """Slot reward: minus weighted predicted rejects, minus dispatch travel cost."""
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    wbar = np.asarray(wbar, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    shortage = np.maximum(wbar - x, 0.0).sum()
    cruise = float((tau * u).sum())
    return -reject_penalty * float(shortage) - cruise


# --- location-level mismatch and vehicle assignment ------------------------

def mismatch(x_cells: np.ndarray, w_cells: np.ndarray) -> np.ndarray:
    """Supply share minus demand share per location; zero shares on empty totals."""
    x = np.asarray(x_cells, dtype=np.float64)
    w = np.asarray(w_cells, dtype=np.float64)
    if x.shape != w.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {w.shape}")
    xs = x.sum()
    ws = w.sum()
    x_share = x / xs if xs > 0 else np.zeros_like(x)
    w_share = w / ws if ws > 0 else np.zeros_like(w)
    return x_share - w_share


def assign_vehicles(u_rounded: np.ndarray, eta: np.ndarray, x_cells: np.ndarray,
                    idle_vehicles, rm: RegionMap) -> tuple[list[DispatchOrder], list[str]]:
    """Map integer zone dispatch counts onto concrete vehicles and cells.

    For each dispatch unit from zone i to zone j the source is the
    highest-mismatch cell of zone i that still holds an idle vehicle, and
    the target is the lowest-mismatch cell of zone j.  The mismatch map
    is updated by one vehicle share after every assignment.  Ties break
    to the lowest row-major cell index, then the lowest vehicle id.

    ``idle_vehicles`` is an iterable of (vehicle_id, (row, col)).
    Returns (orders, warnings); a shortage of idle vehicles truncates the
    plan with a warning rather than failing.
    """
    eta = np.asarray(eta, dtype=np.float64).copy()
    x = np.asarray(x_cells, dtype=np.float64).copy()
    total_supply = x.sum()
    share = 1.0 / total_supply if total_supply > 0 else 0.0

    by_cell: dict[tuple[int, int], list[int]] = {}
    for vid, cell in idle_vehicles:
        by_cell.setdefault(tuple(cell), []).append(vid)
    for vids in by_cell.values():
        vids.sort(reverse=True)  # pop() yields the lowest id

    zone_cells: dict[int, list[tuple[int, int]]] = {}
    rows, cols = rm.assignment.shape
    for r in range(rows):
        for c in range(cols):
            zone_cells.setdefault(int(rm.assignment[r, c]), []).append((r, c))

    orders: list[DispatchOrder] = []
    warnings: list[str] = []
    m = u_rounded.shape[0]
    for i in range(m):
        for j in range(m):
            for _ in range(int(u_rounded[i, j])):
                best_src = None
                best_val = -np.inf
                for cell in zone_cells.get(i, ()):
                    if x[cell] > 0 and by_cell.get(cell):
                        v = eta[cell]
                        if v > best_val:
                            best_val = v
                            best_src = cell
                if best_src is None:
                    msg = f"zone {i}: no idle vehicle left for dispatch to zone {j}"
                    warnings.append(msg)
                    log.warning("%s", msg)
                    continue
                best_dst = None
                best_dst_val = np.inf
                for cell in zone_cells.get(j, ()):
                    if eta[cell] < best_dst_val:
                        best_dst_val = eta[cell]
                        best_dst = cell
                vid = by_cell[best_src].pop()
                orders.append(DispatchOrder(vid, best_dst))
                x[best_src] -= 1
                eta[best_src] -= share
                eta[best_dst] += share
    return orders, warnings


# --- the policy object wired into the simulator -----------------------------

class RhcPolicy:
    """Receding-horizon dispatch policy bound to tables and a zone partition.

    Invoked once per slot: predicts zone demand from the demand model,
    assembles the horizon LP from the simulator's supply snapshot, and
    turns the executed slot's rounded plan into per-vehicle orders via
    the location-level mismatch.
    """

    def __init__(self, zones: RegionMap, trip_times: TripTimeTable,
                 destinations: DestDistribution, demand_predictor,
                 future_demand=None,
                 reject_penalty: float = DEFAULT_REJECT_PENALTY,
                 discount: float = DEFAULT_DISCOUNT,
                 slot_minutes: float = DEFAULT_SLOT_MINUTES,
                 horizon: int = DEFAULT_HORIZON,
                 prediction_window: float = 30.0):
        self.zones = zones
        self.trip_times = trip_times
        self.destinations = destinations
        self.demand_predictor = demand_predictor  # callable(view) -> fine heat
        # clock-indexed predictor for slots beyond the model's window, so
        # the horizon can anticipate surges instead of persisting the
        # current level; None falls back to persistence
        self.future_demand = future_demand        # callable(clock) -> fine heat
        self.reject_penalty = reject_penalty
        self.discount = discount
        self.slot_minutes = slot_minutes
        self.horizon = horizon
        self.prediction_window = prediction_window
        self.cycle = int(slot_minutes)
        self.last_plan: RhcPlan | None = None
        self.warnings: list[str] = []

    def dispatch(self, view) -> list[DispatchOrder]:
        m = self.zones.region_count
        horizon = self.horizon

        x0 = np.zeros(m)
        sched = np.zeros((horizon, m))
        for vid, cell, minutes in view.supply_events:
            zone = int(self.zones.assignment[cell])
            if minutes <= 0.0:
                x0[zone] += 1
            else:
                k = int(minutes // self.slot_minutes)
                if k < horizon:
                    sched[k, zone] += 1

        heat = self.demand_predictor(view)
        scale = self.slot_minutes / self.prediction_window
        near = aggregate_to_regions(heat, self.zones) * scale
        n_near = max(1, int(self.prediction_window // self.slot_minutes))
        wbar = np.tile(near, (horizon + 1, 1))
        if self.future_demand is not None:
            for k in range(n_near, horizon + 1):
                clock = view.clock.plus(k * self.slot_minutes)
                wbar[k] = aggregate_to_regions(self.future_demand(clock),
                                               self.zones) * scale

        tau_slots = []
        p_slots = []
        for k in range(horizon + 1):
            clock = view.clock.plus(k * self.slot_minutes)
            tau_slots.append(self.trip_times.at(clock.dow_index, clock.hour_index))
            p_slots.append(self.destinations.at(clock.dow_index, clock.hour_index))

        plan = solve_rhc(x0, sched, wbar, tau_slots, p_slots,
                         self.reject_penalty, self.discount, self.slot_minutes)
        self.last_plan = plan
        if plan.status != "optimal":
            return []

        eta = mismatch(view.idle_cell_counts, view.trailing_heat)
        idle_vehicles = [(vid, view.vehicle_cells[vid]) for vid in sorted(view.idle_ids)]
        orders, warnings = assign_vehicles(plan.u_rounded, eta,
                                           view.idle_cell_counts, idle_vehicles,
                                           self.zones)
        self.warnings = warnings
        return orders
