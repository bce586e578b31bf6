"""Distributed per-vehicle deep-Q dispatch policy.

Each idle vehicle independently evaluates a 15x15 map of Q-values over
destination regions at most 7 region steps away, built from
vehicle-centered crops of region-level demand/supply/idle maps plus
auxiliary clock and geometry planes.  Training is double Q-learning
over an experience replay of per-vehicle transitions, with a
trip-time-aware discount exponent and a periodically synced target
network.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import neural
from .clock import Clock, periodic_features
from .neural import Concat, Conv2D
from .rhc import mismatch
from .sim import DispatchOrder

ACTION_SIZE = 15          # side of the action map
ACTION_RADIUS = 7         # moves up to 7 regions per axis
CROP_SIZE = 51            # vehicle-centered source window
MAIN_SIZE = 23            # spatial side of the main input branch
MAIN_PLANES = 15          # 5 sources x (crop, 15-pool, 30-pool)
AUX_PLANES = 11

Q_SPEC = (
    Conv2D(MAIN_PLANES, 16, 5, 5, "relu", "valid"),
    Conv2D(16, 32, 3, 3, "relu", "valid"),
    Conv2D(32, 64, 3, 3, "relu", "valid"),
    Concat(branch=(Conv2D(AUX_PLANES, 32, 1, 1, "relu", "valid"),)),
    Conv2D(96, 128, 1, 1, "relu", "valid"),
    Conv2D(128, 1, 1, 1, "linear", "valid"),
)

_DIAGONAL_REACH = ACTION_RADIUS * math.sqrt(2.0)


@dataclass(frozen=True)
class VehicleContext:
    """Compact per-decision state snapshot; feature planes derive from it.

    ``demand``/``idle`` are region-grid maps shared within a simulation
    minute; ``supply`` holds the available-vehicle maps at the 0/15/30
    minute horizons as seen by this vehicle (after earlier vehicles'
    choices in the same minute).
    """

    demand: np.ndarray        # (R, C)
    supply: np.ndarray        # (3, R, C)
    idle: np.ndarray          # (R, C)
    region: tuple[int, int]
    sin_dow: float
    cos_dow: float
    sin_hour: float
    cos_hour: float


@dataclass(frozen=True)
class QInput:
    main: np.ndarray  # (23, 23, 15) row-major plane stack
    aux: np.ndarray   # (15, 15, 11)

    def __post_init__(self):
        if self.main.shape != (MAIN_SIZE, MAIN_SIZE, MAIN_PLANES):
            raise ValueError(f"main planes must be (23, 23, 15), got {self.main.shape}")
        if self.aux.shape != (ACTION_SIZE, ACTION_SIZE, AUX_PLANES):
            raise ValueError(f"aux planes must be (15, 15, 11), got {self.aux.shape}")


def legal_action_mask(region: tuple[int, int], grid_shape: tuple[int, int]) -> np.ndarray:
    """True where the move lands inside the region grid (the center always does)."""
    r, c = region
    rows, cols = grid_shape
    dr = np.arange(ACTION_SIZE) - ACTION_RADIUS
    dc = np.arange(ACTION_SIZE) - ACTION_RADIUS
    ok_r = (r + dr >= 0) & (r + dr < rows)
    ok_c = (c + dc >= 0) & (c + dc < cols)
    return ok_r[:, None] & ok_c[None, :]


def action_offset(cell: tuple[int, int]) -> tuple[int, int]:
    """Region offset encoded by an action cell; (0, 0) is the stay action."""
    return (cell[0] - ACTION_RADIUS, cell[1] - ACTION_RADIUS)


STAY_CELL = (ACTION_RADIUS, ACTION_RADIUS)


def build_feature_planes(ctx: VehicleContext) -> QInput:
    """Assemble the two-branch network input for one vehicle.

    Main branch: each of the five source maps (demand, supply at three
    horizons, idle) is embedded in a vehicle-centered 51x51 window, then
    reduced three ways: a 23x23 center crop, and 15x15 / 30x30 stride-1
    average pools center-cropped to 23x23.

    Auxiliary branch: constant clock trig planes, the one-hot position
    plane, the vehicle's normalized coordinates, per-action destination
    coordinates, normalized move distance, and the legality plane.
    """
    rows, cols = ctx.demand.shape
    sources = np.empty((5, rows, cols))
    sources[0] = ctx.demand
    sources[1:4] = ctx.supply
    sources[4] = ctx.idle

    big = neural.crop_pad_center(sources, ctx.region, CROP_SIZE, CROP_SIZE)
    center = (CROP_SIZE // 2, CROP_SIZE // 2)
    main = np.empty((MAIN_PLANES, MAIN_SIZE, MAIN_SIZE))
    main[0:5] = neural.crop_pad_center(big, center, MAIN_SIZE, MAIN_SIZE)
    main[5:10] = neural.crop_pad_center(neural.avg_pool(big, 15), center,
                                        MAIN_SIZE, MAIN_SIZE)
    main[10:15] = neural.crop_pad_center(neural.avg_pool(big, 30), center,
                                         MAIN_SIZE, MAIN_SIZE)
    return QInput(np.ascontiguousarray(main.transpose(1, 2, 0)), _aux_planes(ctx))


def _aux_planes(ctx: VehicleContext) -> np.ndarray:
    rows, cols = ctx.demand.shape
    aux = np.zeros((ACTION_SIZE, ACTION_SIZE, AUX_PLANES))
    aux[..., 0] = ctx.sin_dow
    aux[..., 1] = ctx.cos_dow
    aux[..., 2] = ctx.sin_hour
    aux[..., 3] = ctx.cos_hour
    aux[ACTION_RADIUS, ACTION_RADIUS, 4] = 1.0
    r, c = ctx.region
    aux[..., 5] = r / (rows - 1) if rows > 1 else 0.0
    aux[..., 6] = c / (cols - 1) if cols > 1 else 0.0
    dr = np.arange(ACTION_SIZE) - ACTION_RADIUS
    dest_r = (r + dr[:, None]) / (rows - 1) if rows > 1 else np.zeros((ACTION_SIZE, 1))
    dest_c = (c + dr[None, :]) / (cols - 1) if cols > 1 else np.zeros((1, ACTION_SIZE))
    aux[..., 7] = np.clip(np.broadcast_to(dest_r, (ACTION_SIZE, ACTION_SIZE)), 0.0, 1.0)
    aux[..., 8] = np.clip(np.broadcast_to(dest_c, (ACTION_SIZE, ACTION_SIZE)), 0.0, 1.0)
    aux[..., 9] = np.sqrt(dr[:, None] ** 2 + dr[None, :] ** 2) / _DIAGONAL_REACH
    aux[..., 10] = legal_action_mask(ctx.region, (rows, cols)).astype(np.float64)
    return aux


class QNetwork:
    """The fixed two-branch convolutional value network."""

    def __init__(self, net: neural.Network):
        if net.spec != Q_SPEC:
            raise ValueError("network spec does not match the Q architecture")
        self.net = net

    @classmethod
    def create(cls, rng: np.random.Generator) -> "QNetwork":
        return cls(neural.Network.create(Q_SPEC, rng))

    def copy(self) -> "QNetwork":
        return QNetwork(self.net.copy())

    def q_map(self, qin: QInput) -> np.ndarray:
        """Raw 15x15 action-value map (no legality masking)."""
        return self.net.forward(qin.main, aux=qin.aux)[..., 0]

    def q_map_batch(self, mains: np.ndarray, auxs: np.ndarray) -> np.ndarray:
        return self.net.forward(mains, aux=auxs)[..., 0]

    def save(self, path, optimizer: neural.RmsProp | None = None,
             extra: dict | None = None) -> None:
        neural.save_model(path, Q_SPEC, self.net.params, optimizer, extra)

    @classmethod
    def load(cls, path) -> tuple["QNetwork", neural.RmsProp | None, dict | None]:
        spec, params, opt, extra = neural.load_model(path)
        if spec != Q_SPEC:
            raise ValueError("checkpoint is not a Q-network")
        return cls(neural.Network(spec, params)), opt, extra


def masked_q(qmap: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Illegal cells forced to -inf so they can never be selected."""
    return np.where(legal, qmap, -np.inf)


def select_action(qmap: np.ndarray, epsilon: float, rng: np.random.Generator
                  ) -> tuple[int, int]:
    """Epsilon-greedy over the legal (finite) cells of a masked Q-map.

    Greedy ties resolve to the lowest row-major index.  The random
    branch draws uniformly over legal cells.
    """
    legal_flat = np.nonzero(np.isfinite(qmap.ravel()))[0]
    if legal_flat.size == 0:
        raise ValueError("no legal action available")
    if rng.random() < epsilon:
        flat = int(legal_flat[rng.integers(legal_flat.size)])
    else:
        flat = int(np.argmax(qmap.ravel()))
    return (flat // ACTION_SIZE, flat % ACTION_SIZE)


def reward_dqn(pickups: float, dispatch_minutes: float, reject_weight: float) -> float:
    """Weighted rides minus dispatch cruising cost over a decision window."""
    if pickups < 0 or dispatch_minutes < 0:
        raise ValueError("reward inputs must be non-negative")
    return reject_weight * pickups - dispatch_minutes


@dataclass(frozen=True)
class Transition:
    """One replay entry linking consecutive decisions of a vehicle.

    ``tau_steps`` is the dispatch trip time (in simulation steps) of the
    action selected at the *next* state; it drives the discount exponent
    ``gamma ** (1 + tau_steps)`` of the double-Q target.
    """

    ctx: VehicleContext
    action: tuple[int, int]
    reward: float
    next_ctx: VehicleContext
    tau_steps: int


class ReplayBuffer:
    """Ring buffer of the most recent transitions."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._pos] = item
        self._pos = (self._pos + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int) -> list[Transition]:
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


@dataclass(frozen=True)
class Schedules:
    """Exploration and action-rate ramps over training steps."""

    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_ramp: int = 5000
    alpha_start: float = 0.3
    alpha_end: float = 1.0
    alpha_ramp: int = 5000
    total_steps: int = 20_000
    sync_period: int = 150

    def epsilon(self, step: int) -> float:
        if step >= self.eps_ramp:
            return self.eps_end
        frac = step / self.eps_ramp
        return self.eps_start + (self.eps_end - self.eps_start) * frac

    def alpha(self, step: int) -> float:
        if step >= self.alpha_ramp:
            return self.alpha_end
        frac = step / self.alpha_ramp
        return self.alpha_start + (self.alpha_end - self.alpha_start) * frac


def assemble_batch(contexts: list[VehicleContext]) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`build_feature_planes` with the pooling vectorized.

    Produces the same planes as the per-context builder (one of the unit
    tests asserts this) but runs the two average pools once over the
    whole minibatch.
    """
    n = len(contexts)
    bigs = np.empty((n, 5, CROP_SIZE, CROP_SIZE))
    auxs = np.empty((n, ACTION_SIZE, ACTION_SIZE, AUX_PLANES))
    for i, ctx in enumerate(contexts):
        rows, cols = ctx.demand.shape
        src = np.empty((5, rows, cols))
        src[0] = ctx.demand
        src[1:4] = ctx.supply
        src[4] = ctx.idle
        bigs[i] = neural.crop_pad_center(src, ctx.region, CROP_SIZE, CROP_SIZE)
        auxs[i] = _aux_planes(ctx)
    lo = (CROP_SIZE - MAIN_SIZE) // 2
    hi = lo + MAIN_SIZE
    stacked = np.concatenate([
        bigs[:, :, lo:hi, lo:hi],
        neural.avg_pool(bigs, 15)[:, :, lo:hi, lo:hi],
        neural.avg_pool(bigs, 30)[:, :, lo:hi, lo:hi],
    ], axis=1)
    mains = np.ascontiguousarray(stacked.transpose(0, 2, 3, 1))
    return mains, auxs


# side of one output cell's receptive field in the main input
# (valid 5x5 + 3x3 + 3x3 convolutions; the 1x1 layers do not widen it)
_FIELD = 9


def _crop_at_cells(mains: np.ndarray, auxs: np.ndarray, rows: np.ndarray,
                   cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample receptive-field crops so only one output cell is computed.

    The network is fully convolutional, so evaluating it on the 9x9 main
    window and 1x1 aux window of an action cell reproduces exactly that
    cell of the full 15x15 map.
    """
    n = mains.shape[0]
    main_c = np.empty((n, _FIELD, _FIELD, MAIN_PLANES))
    aux_c = np.empty((n, 1, 1, AUX_PLANES))
    for i in range(n):
        r, c = rows[i], cols[i]
        main_c[i] = mains[i, r:r + _FIELD, c:c + _FIELD, :]
        aux_c[i] = auxs[i, r:r + 1, c:c + 1, :]
    return main_c, aux_c


def train_step(online: QNetwork, target: QNetwork, buffer: ReplayBuffer,
               opt: neural.RmsProp, gamma: float, rng: np.random.Generator,
               batch_size: int = 64) -> tuple[float, float] | None:
    """One double-Q minibatch update; returns (loss, mean max-Q) or None.

    The online network picks the argmax action at the next state, the
    target network values it, and the future term is discounted by
    ``gamma ** (1 + tau)`` where tau is the next decision's dispatch
    trip time in steps.  Only the taken action's output receives
    gradient, so the forward/backward passes for the current state and
    the target valuation run on receptive-field crops.  A buffer below
    one minibatch is a signalled no-op.
    """
    if len(buffer) < batch_size:
        return None
    batch = buffer.sample(rng, batch_size)

    next_mains, next_auxs = assemble_batch([t.next_ctx for t in batch])
    q_next_online = online.q_map_batch(next_mains, next_auxs)
    legal = next_auxs[..., 10] > 0.5
    q_next_online = np.where(legal, q_next_online, -np.inf)
    flat_argmax = q_next_online.reshape(batch_size, -1).argmax(axis=1)
    amax_r = flat_argmax // ACTION_SIZE
    amax_c = flat_argmax % ACTION_SIZE
    tgt_main, tgt_aux = _crop_at_cells(next_mains, next_auxs, amax_r, amax_c)
    future = target.q_map_batch(tgt_main, tgt_aux).reshape(batch_size)

    taus = np.array([t.tau_steps for t in batch], dtype=np.float64)
    rewards = np.array([t.reward for t in batch])
    targets = rewards + gamma ** (1.0 + taus) * future

    mains, auxs = assemble_batch([t.ctx for t in batch])
    rows = np.array([t.action[0] for t in batch])
    cols = np.array([t.action[1] for t in batch])
    cur_main, cur_aux = _crop_at_cells(mains, auxs, rows, cols)
    out, caches = neural.forward_cached(Q_SPEC, online.net.params, cur_main, cur_aux)
    picked = out.reshape(batch_size)
    err = picked - targets
    loss = float(np.mean(err ** 2))

    d_out = (2.0 * err / batch_size).reshape(out.shape)
    grads = neural.backward_from_grad(Q_SPEC, online.net.params, caches, d_out)
    opt.step(online.net.params, grads)

    mean_max_q = float(q_next_online.reshape(batch_size, -1).max(axis=1).mean())
    return loss, mean_max_q


def sync_target(online: QNetwork, target: QNetwork, step: int, period: int) -> bool:
    """Copy online weights into the target every ``period`` steps."""
    if period < 1:
        raise ValueError("sync period must be at least 1")
    if step % period == 0:
        target.net.load_params_from(online.net)
        return True
    return False


def write_training_log(path, rows: list[tuple]) -> None:
    """CSV of per-step training diagnostics: step, loss, mean max-Q, eps, alpha."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "mean_max_q", "epsilon", "alpha"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


# --- the policy object wired into the simulator -----------------------------

@dataclass
class DqnConfig:
    reject_weight: float = 10.0
    discount: float = 0.98          # per one-minute simulation step
    decision_interval: float = 15.0 # minimum minutes between a vehicle's decisions
    supply_horizon: int = 30
    cycle: int = 1                  # policy invocation period; 15 mimics the slot cycle
    train: bool = False
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 64
    buffer_capacity: int = 10_000
    schedules: Schedules = field(default_factory=Schedules)


@dataclass
class _Pending:
    ctx: VehicleContext
    action: tuple[int, int]
    pickups: float
    dispatch_minutes: float
    t: float


class DqnPolicy:
    """Per-vehicle greedy dispatch with optional in-simulation training.

    Vehicles decide sequentially in ascending id order; after each move
    the supply projection is decremented at the origin and incremented
    at the destination's arrival horizon, so later vehicles observe
    earlier choices.  A vehicle re-decides at most every
    ``decision_interval`` minutes, except that a fresh dropoff makes it
    immediately eligible again.
    """

    def __init__(self, net: QNetwork, region_map, region_shape: tuple[int, int],
                 demand_predictor, config: DqnConfig | None = None):
        self.net = net
        self.region_map = region_map
        self.region_shape = region_shape
        self.demand_predictor = demand_predictor  # callable(view) -> fine heat
        self.config = config or DqnConfig()
        self.cycle = self.config.cycle
        self.rng = np.random.default_rng(self.config.seed)
        self.last_decision: dict[int, float] = {}
        self.step = 0
        self.training_log: list[tuple] = []
        self._zone_cells: dict[int, list[tuple[int, int]]] = {}
        rows, cols = region_map.assignment.shape
        for r in range(rows):
            for c in range(cols):
                self._zone_cells.setdefault(int(region_map.assignment[r, c]), []).append((r, c))
        if self.config.train:
            self.target = net.copy()
            self.buffer = ReplayBuffer(self.config.buffer_capacity)
            self.opt = neural.RmsProp(lr=self.config.lr)
            self.pending: dict[int, _Pending] = {}

    def _region_cell(self, fine_cell) -> tuple[int, int]:
        rid = int(self.region_map.assignment[fine_cell])
        return (rid // self.region_shape[1], rid % self.region_shape[1])

    def _eligible(self, vid: int, t: float, last_dropoff: float) -> bool:
        last = self.last_decision.get(vid)
        if last is None:
            return True
        if t - last >= self.config.decision_interval:
            return True
        return last_dropoff > last

    def dispatch(self, view) -> list[DispatchOrder]:
        from .geo import aggregate_to_regions

        cfg = self.config
        rr, rc = self.region_shape
        horizon = cfg.supply_horizon

        heat = self.demand_predictor(view)
        demand_regions = aggregate_to_regions(heat, self.region_map).reshape(rr, rc)
        idle_regions = np.zeros((rr, rc))
        for vid in view.idle_ids:
            idle_regions[self._region_cell(view.vehicle_cells[vid])] += 1

        x = np.zeros((rr, rc, horizon + 1))
        for vid, cell, minutes in view.supply_events:
            h = int(np.ceil(minutes))
            if h <= horizon:
                x[self._region_cell(cell) + (h,)] += 1

        eta_cells = None  # built lazily; many invocations issue no orders
        sd, cd, sh, ch = periodic_features(view.clock)
        eps = cfg.schedules.epsilon(self.step) if cfg.train else 0.0
        alpha = cfg.schedules.alpha(self.step) if cfg.train else 1.0

        orders: list[DispatchOrder] = []
        for vid in sorted(view.idle_ids):
            if not self._eligible(vid, view.t, float(view.last_dropoff[vid])):
                continue
            if cfg.train and self.rng.random() >= alpha:
                continue  # skipped outright; no decision, no transition

            region = self._region_cell(view.vehicle_cells[vid])
            supply3 = np.stack([
                x[..., :1].sum(axis=-1),
                x[..., :16].sum(axis=-1),
                x[..., :horizon + 1].sum(axis=-1),
            ])
            ctx = VehicleContext(demand=demand_regions, supply=supply3,
                                 idle=idle_regions, region=region,
                                 sin_dow=sd, cos_dow=cd, sin_hour=sh, cos_hour=ch)
            legal = legal_action_mask(region, (rr, rc))
            if cfg.train and self.rng.random() < eps:
                legal_flat = np.nonzero(legal.ravel())[0]
                flat = int(legal_flat[self.rng.integers(legal_flat.size)])
                action = (flat // ACTION_SIZE, flat % ACTION_SIZE)
            else:
                qmap = masked_q(self.net.q_map(build_feature_planes(ctx)), legal)
                flat = int(np.argmax(qmap.ravel()))
                action = (flat // ACTION_SIZE, flat % ACTION_SIZE)

            tau_steps = 0
            if action != STAY_CELL:
                dr, dc = action_offset(action)
                dest_region = (region[0] + dr, region[1] + dc)
                if eta_cells is None:
                    eta_cells = mismatch(view.idle_cell_counts, view.trailing_heat)
                dest_cell = None
                best = -np.inf
                rid = dest_region[0] * rc + dest_region[1]
                for cell in self._zone_cells.get(rid, ()):
                    if eta_cells[cell] > best:
                        best = eta_cells[cell]
                        dest_cell = cell
                minutes = view.eta_minutes(view.vehicle_cells[vid], dest_cell)
                tau_steps = max(1, int(np.ceil(minutes)))
                orders.append(DispatchOrder(vid, dest_cell))
                x[region + (0,)] -= 1
                x[dest_region + (min(tau_steps, horizon),)] += 1

            if cfg.train:
                prev = self.pending.get(vid)
                if prev is not None:
                    reward = reward_dqn(
                        float(view.pickups[vid]) - prev.pickups,
                        float(view.dispatch_minutes[vid]) - prev.dispatch_minutes,
                        cfg.reject_weight,
                    )
                    self.buffer.push(Transition(prev.ctx, prev.action, reward,
                                                ctx, tau_steps))
                self.pending[vid] = _Pending(ctx, action,
                                             float(view.pickups[vid]),
                                             float(view.dispatch_minutes[vid]),
                                             view.t)
            self.last_decision[vid] = view.t
        return orders

    def train_tick(self) -> None:
        """One training step after a simulation minute; logs diagnostics."""
        cfg = self.config
        result = train_step(self.net, self.target, self.buffer, self.opt,
                            cfg.discount, self.rng, cfg.batch_size)
        if result is None:
            loss, mean_max_q = float("nan"), float("nan")
        else:
            loss, mean_max_q = result
        self.training_log.append((self.step, loss, mean_max_q,
                                  cfg.schedules.epsilon(self.step),
                                  cfg.schedules.alpha(self.step)))
        self.step += 1
        sync_target(self.net, self.target, self.step, cfg.schedules.sync_period)
