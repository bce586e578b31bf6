import numpy as np
import pytest

from fleetsim.clock import Clock
from fleetsim.geo import GridSpec, Location, center_of, haversine
from fleetsim.roadgraph import build_graph
from fleetsim.sim import (
    DISPATCHING,
    IDLE,
    OCCUPIED,
    TO_PICKUP,
    DispatchOrder,
    RideRequest,
    Simulation,
    VehicleState,
    finalize_metrics,
    idle_set,
    init_fleet,
)


class ConstantEta:
    """Stub ETA model: fixed minutes regardless of features."""

    def __init__(self, minutes=2.0):
        self.minutes = minutes

    def predict(self, features):
        return self.minutes


class DistanceEta:
    """Stub ETA model: minutes proportional to the trip distance feature."""

    def __init__(self, minutes_per_km=2.0):
        self.k = minutes_per_km

    def predict(self, features):
        return self.k * features[8]


def make_grid(rows=4, cols=4, cell=1000.0):
    return GridSpec(rows=rows, cols=cols, cell_size=cell, origin=Location(40.0, -74.0))


def grid_graph(grid):
    """4-connected road graph over the cell centers."""
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


def req(rid, minute, pickup, dropoff, trip=5.0, dist=2.0):
    return RideRequest(rid, minute, pickup, dropoff, trip, dist)


class TestInitFleet:
    def test_vehicles_at_first_pickups(self):
        grid = make_grid()
        a = center_of((0, 0), grid)
        b = center_of((1, 1), grid)
        fleet = init_fleet([req(0, 0.0, a, b), req(1, 1.0, b, a)], 2)
        assert fleet[0].loc == a
        assert fleet[1].loc == b
        assert all(v.status == IDLE for v in fleet)

    def test_too_few_requests(self):
        grid = make_grid()
        a = center_of((0, 0), grid)
        with pytest.raises(ValueError):
            init_fleet([req(0, 0.0, a, a)], 2)

    def test_deterministic(self):
        grid = make_grid()
        a = center_of((0, 0), grid)
        b = center_of((2, 3), grid)
        reqs = [req(0, 0.0, a, b), req(1, 1.0, b, a)]
        f1 = init_fleet(reqs, 2)
        f2 = init_fleet(reqs, 2)
        assert [(v.vid, v.loc) for v in f1] == [(v.vid, v.loc) for v in f2]


class TestIdleSet:
    def vehicle(self, vid, status=IDLE, ordered=False, last_ride=-np.inf):
        v = VehicleState(vid=vid, loc=Location(40.0, -74.0))
        v.status = status
        v.ordered_since_dropoff = ordered
        v.last_ride_time = last_ride
        if status != IDLE:
            v.arrival_time = 1e9
            v.dest = v.loc
        return v

    def test_fresh_dropoff_without_order_is_in(self):
        v = self.vehicle(0, IDLE, ordered=False, last_ride=95.0)
        assert idle_set([v], t=100.0) == [0]

    def test_dispatched_recently_but_ride_starved_is_in(self):
        v = self.vehicle(0, DISPATCHING, ordered=True, last_ride=80.0)
        assert idle_set([v], t=100.0) == [0]  # 20 min since last ride

    def test_ordered_and_recent_ride_is_out(self):
        v = self.vehicle(0, IDLE, ordered=True, last_ride=95.0)
        assert idle_set([v], t=100.0) == []

    def test_committed_vehicles_never_in(self):
        for status in (TO_PICKUP, OCCUPIED):
            v = self.vehicle(0, status)
            assert idle_set([v], t=100.0) == []


def scripted_simulation():
    grid = make_grid()
    graph = grid_graph(grid)
    p00 = center_of((0, 0), grid)
    p03 = center_of((0, 3), grid)
    p30 = center_of((3, 0), grid)
    p33 = center_of((3, 3), grid)
    requests = [
        req(0, 0.0, p00, p33, trip=5.0),
        req(1, 0.0, p03, p00, trip=7.0),
        req(2, 3.0, p30, p00, trip=6.0),
        req(3, 4.0, p33, p00, trip=5.0),   # everyone busy: reject
        req(4, 8.0, p33, p00, trip=5.0),   # served by vehicle 0 after dropoff
    ]
    return Simulation(grid, graph, ConstantEta(2.0), requests, n_vehicles=3,
                      policy=None, warmup=0, event_log=[])


class TestScriptedScenario:
    def test_hand_traced_metrics(self):
        sim = scripted_simulation()
        metrics = sim.run(20)
        report = finalize_metrics(metrics)
        assert report["total_requests"] == 5
        assert report["rejects"] == 1
        assert report["accepted"] == 4
        assert report["reject_rate"] == pytest.approx(0.2)
        assert report["mean_wait_minutes"] == pytest.approx(2.0)
        # hand trace: vehicles spend 4+2+2 minutes en route to pickups
        assert metrics.cruise_sum == 8.0
        assert report["idle_cruise_per_accepted"] == pytest.approx(2.0)
        # occupied minutes 10, 7, 6 over 20 elapsed
        np.testing.assert_array_equal(metrics.occupied_minutes, [10.0, 7.0, 6.0])
        assert report["utilization_mean"] == pytest.approx((0.5 + 0.35 + 0.3) / 3)
        assert report["utilization_min"] == pytest.approx(0.3)

    def test_event_log_records_lifecycle(self):
        sim = scripted_simulation()
        sim.run(20)
        events = [e[1] for e in sim.event_log]
        assert events.count("assign") == 4
        assert events.count("reject") == 1
        assert events.count("pickup") == 4
        assert events.count("dropoff") == 4

    def test_bit_identical_reruns(self):
        r1 = finalize_metrics(scripted_simulation().run(20))
        r2 = finalize_metrics(scripted_simulation().run(20))
        assert r1 == r2

    def test_vehicle_conservation_each_step(self):
        sim = scripted_simulation()
        for _ in range(20):
            sim.step_minute()
            statuses = [v.status for v in sim.fleet]
            assert len(statuses) == 3
            assert all(s in (IDLE, DISPATCHING, TO_PICKUP, OCCUPIED) for s in statuses)

    def test_arrival_times_never_in_past(self):
        sim = scripted_simulation()
        for _ in range(20):
            t_before = sim.t
            sim.step_minute()
            for v in sim.fleet:
                if v.arrival_time is not None:
                    assert v.arrival_time >= t_before


class TestMatching:
    def test_zero_distance_vehicle_matched_with_eta_wait(self):
        grid = make_grid()
        p = center_of((1, 1), grid)
        sim = Simulation(grid, grid_graph(grid), ConstantEta(3.5),
                         [req(0, 0.0, p, center_of((0, 0), grid))],
                         n_vehicles=1, warmup=0)
        m = sim.run(2)
        assert m.accepted == 1
        assert m.wait_sum == pytest.approx(3.5)
        assert sim.fleet[0].status == TO_PICKUP

    def test_reject_beyond_five_kilometers(self):
        grid = make_grid(rows=8, cols=8)
        near = center_of((0, 0), grid)
        far = center_of((0, 6), grid)  # ~6 km east
        assert haversine(near, far) > 5000.0
        sim = Simulation(grid, grid_graph(grid), ConstantEta(),
                         [req(0, 0.0, near, near), req(1, 1.0, far, near)],
                         n_vehicles=1, warmup=0)
        m = sim.run(3)
        assert m.rejects == 1
        assert m.accepted == 1

    def test_within_five_kilometers_matched(self):
        grid = make_grid(rows=8, cols=8)
        base = center_of((0, 0), grid)
        near = center_of((0, 4), grid)  # ~4 km
        assert haversine(base, near) < 5000.0
        # vehicle serves a trivial ride at base first, then the 4 km request
        sim = Simulation(grid, grid_graph(grid), ConstantEta(),
                         [req(0, 0.0, base, base, trip=1.0), req(1, 5.0, near, base)],
                         n_vehicles=1, warmup=0)
        m = sim.run(8)
        assert m.rejects == 0
        assert m.accepted == 2

    def test_equidistant_tie_prefers_lower_vehicle_id(self):
        grid = make_grid()
        p = center_of((2, 2), grid)
        other = center_of((0, 0), grid)
        # both vehicles start at the same pickup location
        sim = Simulation(grid, grid_graph(grid), ConstantEta(),
                         [req(0, 0.0, p, other), req(1, 0.0, p, other),
                          req(2, 2.0, p, other)],
                         n_vehicles=2, warmup=0)
        sim.step_minute()
        assert sim.fleet[0].status == TO_PICKUP
        assert sim.fleet[0].ride_id == 0
        assert sim.fleet[1].status == TO_PICKUP
        assert sim.fleet[1].ride_id == 1

    def test_dispatching_vehicle_matchable_mid_route(self):
        grid = make_grid(rows=8, cols=8)
        start = center_of((0, 0), grid)
        sim = Simulation(grid, grid_graph(grid), ConstantEta(10.0),
                         [req(0, 0.0, start, start, trip=1.0)],
                         n_vehicles=1, warmup=0)
        sim._queue.clear()  # drive manually
        v = sim.fleet[0]
        sim.apply_dispatch([DispatchOrder(0, (0, 6))], t=0.0)
        assert v.status == DISPATCHING
        # halfway through a 10-minute move it sits ~3 km east, within reach
        sim.t = 5
        pos = sim.position(v, 5.0)
        assert 2000.0 < haversine(start, pos) < 4500.0
        target = center_of((0, 3), grid)
        sim._queue.append(req(7, 5.0, target, start, trip=2.0))
        sim._minute_heat = np.zeros(grid.shape)
        sim._match_requests(5.0, measured=True)
        assert v.status == TO_PICKUP
        assert v.ride_id == 7


class TestApplyDispatch:
    def test_empty_plan_changes_nothing(self):
        sim = scripted_simulation()
        before = [(v.status, v.loc) for v in sim.fleet]
        sim.apply_dispatch([], t=0.0)
        assert [(v.status, v.loc) for v in sim.fleet] == before

    def test_dispatch_to_current_cell_is_immediate(self):
        grid = make_grid()
        p = center_of((1, 1), grid)
        sim = Simulation(grid, grid_graph(grid), ConstantEta(),
                         [req(0, 0.0, p, p)], n_vehicles=1, warmup=0)
        sim.apply_dispatch([DispatchOrder(0, (1, 1))], t=0.0)
        v = sim.fleet[0]
        assert v.status == IDLE
        assert v.loc == p

    def test_committed_vehicle_order_skipped_with_warning(self, caplog):
        sim = scripted_simulation()
        sim.step_minute()  # vehicle 0 now to_pickup
        v = sim.fleet[0]
        assert v.status == TO_PICKUP
        with caplog.at_level("WARNING"):
            sim.apply_dispatch([DispatchOrder(0, (3, 3))], t=1.0)
        assert v.status == TO_PICKUP
        assert any("ignored" in r.message for r in caplog.records)

    def test_longer_detour_weakly_increases_eta(self):
        # same endpoints, direct edge versus forced detour
        a = Location(40.0, -74.0)
        b = Location(40.0, -73.988)  # ~1 km east
        mid = Location(40.018, -73.994)  # ~2 km detour apex
        direct = build_graph({0: a, 1: b}, [(0, 1, haversine(a, b))])
        detour = build_graph(
            {0: a, 1: b, 2: mid},
            [(0, 2, haversine(a, mid)), (2, 1, haversine(mid, b))],
        )
        grid = make_grid()
        reqs = [req(0, 0.0, a, b)]
        eta = DistanceEta(2.0)
        sim_direct = Simulation(grid, direct, eta, reqs, 1, warmup=0)
        sim_detour = Simulation(grid, detour, eta, reqs, 1, warmup=0)
        _, d_direct = sim_direct._route(a, b)
        _, d_detour = sim_detour._route(a, b)
        assert d_detour >= d_direct
        t_direct = sim_direct._eta(a, b, d_direct, 0.0)
        t_detour = sim_detour._eta(a, b, d_detour, 0.0)
        assert t_detour >= t_direct


class RecordingPolicy:
    cycle = 15

    def __init__(self):
        self.calls = []

    def dispatch(self, view):
        self.calls.append(view.t)
        return []


class TestPolicyInvocation:
    def test_policy_not_called_during_warmup_then_on_cycle(self):
        grid = make_grid()
        p = center_of((0, 0), grid)
        reqs = [req(i, float(i), p, p) for i in range(3)]
        policy = RecordingPolicy()
        sim = Simulation(grid, grid_graph(grid), ConstantEta(), reqs,
                         n_vehicles=1, policy=policy, warmup=30)
        sim.run(91)
        assert policy.calls == [30.0, 45.0, 60.0, 75.0, 90.0]

    def test_warmup_excluded_from_metrics(self):
        grid = make_grid()
        p = center_of((0, 0), grid)
        reqs = [req(0, 5.0, p, p, trip=2.0), req(1, 40.0, p, p, trip=2.0)]
        sim = Simulation(grid, grid_graph(grid), ConstantEta(), reqs,
                         n_vehicles=1, warmup=30)
        m = sim.run(60)
        assert m.total_requests == 1  # only the post-warmup request counts


class TestFinalize:
    def test_five_percent_reject_rate(self):
        from fleetsim.sim import EpisodeMetrics

        m = EpisodeMetrics(n_vehicles=2)
        m.total_requests = 100
        m.rejects = 5
        m.accepted = 95
        m.wait_sum = 190.0
        m.elapsed_minutes = 60
        report = finalize_metrics(m)
        assert report["reject_rate"] == pytest.approx(0.05)
        assert report["mean_wait_minutes"] == pytest.approx(2.0)

    def test_zero_accepted_yields_none_sentinels(self):
        from fleetsim.sim import EpisodeMetrics

        m = EpisodeMetrics(n_vehicles=1)
        m.total_requests = 3
        m.rejects = 3
        m.elapsed_minutes = 10
        report = finalize_metrics(m)
        assert report["mean_wait_minutes"] is None
        assert report["idle_cruise_per_accepted"] is None

    def test_always_occupied_vehicle_utilization_one(self):
        from fleetsim.sim import EpisodeMetrics

        m = EpisodeMetrics(n_vehicles=1)
        m.elapsed_minutes = 50
        m.occupied_minutes[0] = 50.0
        report = finalize_metrics(m)
        assert report["utilization_mean"] == pytest.approx(1.0)
