import math
import random

import numpy as np
import pytest

from mergerl import _fastsim
from mergerl.sim import (
    EPS,
    ConfigError,
    DriverParams,
    RoadConfig,
    SimWorld,
    Vehicle,
    attempt_lane_change,
    check_invariants,
    invariant_sweep,
    krauss_step,
    lane_average_speed,
    lane_average_speeds,
    run_rollout,
    spawn_traffic,
)

ROAD = RoadConfig()
DRIVER = DriverParams()


def world_of(vehicles, seed=0):
    w = SimWorld(ROAD, DRIVER, vehicles, np.random.default_rng(seed))
    w.sort()
    return w


# --- configuration ---------------------------------------------------------

def test_defaults_describe_the_scenario():
    assert ROAD.lane_count == 3 and ROAD.road_length == 300 and ROAD.roadblock_pos == 280
    assert ROAD.merge_points == tuple(20.0 * k for k in range(1, 13))
    assert all(m < ROAD.roadblock_pos for m in ROAD.merge_points)


@pytest.mark.parametrize("kwargs", [
    dict(lane_count=1),
    dict(roadblock_pos=301.0),
    dict(roadblock_pos=0.0),
    dict(merge_spacing=30.0),  # 12 * 30 > 280
    dict(roadblock_lane=3),
])
def test_bad_road_config_rejected(kwargs):
    with pytest.raises(ConfigError):
        RoadConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(v_max=0.0), dict(sigma=1.5), dict(dt=0.0), dict(decel=-1.0)])
def test_bad_driver_params_rejected(kwargs):
    with pytest.raises(ConfigError):
        DriverParams(**kwargs)


# --- spawn -----------------------------------------------------------------

def test_spawn_empty_road_has_only_target():
    w = spawn_traffic(ROAD, DRIVER, 0, 42)
    assert len(w.vehicles) == 1
    t = w.target
    assert t.is_target and t.lane == ROAD.roadblock_lane and t.pos == 0.0 and t.speed == DRIVER.v_max


def test_spawn_is_deterministic():
    a, b = spawn_traffic(ROAD, DRIVER, 5, 7), spawn_traffic(ROAD, DRIVER, 5, 7)
    assert a.snapshot() == b.snapshot()
    assert a.rng.bit_generator.state == b.rng.bit_generator.state


def test_spawn_respects_invariants_over_seeds():
    for seed in range(1, 101):
        w = spawn_traffic(ROAD, DRIVER, 5, seed)
        assert len(w.vehicles) == 1 + 5 * ROAD.lane_count
        assert check_invariants(w) == []
        assert all(0.5 * DRIVER.v_max <= v.speed <= DRIVER.v_max for v in w.vehicles)


def test_spawn_rejects_density_that_does_not_fit():
    # 20 cars of 5 units with 2.5 spacing need 142.5 units, more than the 140-unit spawn zone
    with pytest.raises(ConfigError, match="cannot place"):
        spawn_traffic(ROAD, DRIVER, 20, 0)
    spawn_traffic(ROAD, DRIVER, 18, 0)


def test_spawn_negative_density():
    with pytest.raises(ConfigError):
        spawn_traffic(ROAD, DRIVER, -1, 0)


# --- car following -----------------------------------------------------------

def test_free_vehicle_accelerates_within_dawdle_band():
    lo = DRIVER.accel * DRIVER.dt * (1 - DRIVER.sigma)
    hi = DRIVER.accel * DRIVER.dt
    assert (lo, hi) == pytest.approx((1.04, 1.3))
    for seed in range(200):
        w = krauss_step(world_of([Vehicle(0, 1, 50.0, 0.0, is_target=True)], seed))
        v = w.target.speed
        assert lo - 1e-12 <= v <= hi + 1e-12
        assert w.target.pos == pytest.approx(50.0 + v * DRIVER.dt)
    assert w.clock == DRIVER.dt


def test_follower_at_min_gap_behind_stopped_leader_stays_put():
    leader = Vehicle(1, 1, 100.0, 0.0)
    follower = Vehicle(0, 1, 100.0 - leader.length - DRIVER.min_gap, 0.0, is_target=True)
    for seed in range(20):
        w = krauss_step(world_of([leader, follower], seed).copy())
        assert w.vehicle(0).speed == 0.0
        assert w.vehicle(0).pos == follower.pos


def test_vehicle_stops_before_roadblock():
    w = world_of([Vehicle(0, ROAD.roadblock_lane, 200.0, DRIVER.v_max, is_target=True)])
    for _ in range(200):
        krauss_step(w)
        assert w.target.pos <= ROAD.roadblock_pos
        assert check_invariants(w) == []
    assert w.target.speed == 0.0
    # dawdling may leave it a little short of the min_gap line, never past it
    assert ROAD.roadblock_pos - DRIVER.min_gap - 1.0 <= w.target.pos <= ROAD.roadblock_pos - DRIVER.min_gap


def test_safe_speed_law_matches_closed_form():
    # sigma = 0 removes the noise, so the update is the bare formula
    p = DriverParams(sigma=0.0)
    leader = Vehicle(1, 1, 60.0, 5.0)
    follower = Vehicle(0, 1, 40.0, 10.0, is_target=True)
    w = SimWorld(ROAD, p, [follower, leader], np.random.default_rng(0))
    krauss_step(w)
    g = 60.0 - 5.0 - 40.0 - p.min_gap
    v_safe = 5.0 + (g - 5.0 * p.reaction_time) / ((10.0 + 5.0) / (2 * p.decel) + p.reaction_time)
    assert w.vehicle(0).speed == pytest.approx(min(10.0 + p.accel * p.dt, v_safe, p.v_max), abs=1e-12)


def test_vehicles_leave_at_road_end_but_target_stays():
    w = world_of([Vehicle(0, 1, 299.0, 15.0, is_target=True), Vehicle(1, 2, 299.0, 15.0)])
    krauss_step(w)
    assert [v.id for v in w.vehicles] == [0]


# --- lane changes ----------------------------------------------------------

def test_lane_change_into_empty_lane_is_accepted():
    w = world_of([Vehicle(0, 0, 100.0, 10.0, is_target=True)])
    w, ok = attempt_lane_change(w, 0, 1)
    assert ok and w.target.lane == 1


def test_lane_change_next_to_occupant_is_rejected():
    w = world_of([Vehicle(0, 0, 100.0, 10.0, is_target=True), Vehicle(1, 1, 100.0, 10.0)])
    w, ok = attempt_lane_change(w, 0, 1)
    assert not ok and w.target.lane == 0


def test_lane_change_gap_thresholds():
    # lead needs min_gap + v*tau = 12.5, lag needs min_gap + v_lag*tau = 8.5
    def base():
        return [Vehicle(0, 0, 100.0, 10.0, is_target=True)]

    lead_len = 5.0
    exact = base() + [Vehicle(1, 1, 100.0 + 12.5 + lead_len, 0.0), Vehicle(2, 1, 100.0 - 5.0 - 8.5, 6.0)]
    assert attempt_lane_change(world_of(exact), 0, 1)[1]
    short_lead = base() + [Vehicle(1, 1, 100.0 + 12.4 + lead_len, 0.0)]
    assert not attempt_lane_change(world_of(short_lead), 0, 1)[1]
    short_lag = base() + [Vehicle(2, 1, 100.0 - 5.0 - 8.4, 6.0)]
    assert not attempt_lane_change(world_of(short_lag), 0, 1)[1]


def test_lane_change_into_closed_lane_past_roadblock_is_rejected():
    w = world_of([Vehicle(0, 1, 285.0, 10.0, is_target=True)])
    assert not attempt_lane_change(w, 0, 0)[1]


def test_lane_change_requires_adjacent_lane():
    w = world_of([Vehicle(0, 0, 100.0, 10.0, is_target=True)])
    with pytest.raises(ValueError):
        attempt_lane_change(w, 0, 2)
    with pytest.raises(ValueError):
        attempt_lane_change(w, 0, -1)
    with pytest.raises(KeyError):
        attempt_lane_change(w, 9, 1)


def test_accepted_lane_changes_never_create_overlap():
    rng = random.Random(0)
    accepted = 0
    for seed in range(1000):
        w = spawn_traffic(ROAD, DRIVER, rng.randint(1, 18), seed)
        for _ in range(rng.randint(0, 30)):
            krauss_step(w)
        veh = rng.choice(w.vehicles)
        lanes = [ln for ln in (veh.lane - 1, veh.lane + 1) if 0 <= ln < ROAD.lane_count]
        w, ok = attempt_lane_change(w, veh.id, rng.choice(lanes))
        accepted += ok
        assert check_invariants(w) == []
    assert accepted > 100


# --- detectors -------------------------------------------------------------

def test_empty_lane_reads_v_max():
    w = world_of([Vehicle(0, 0, 0.0, 3.0, is_target=True)])
    assert lane_average_speed(w, 1) == DRIVER.v_max == 15.0


def test_lane_average_is_arithmetic_mean():
    w = world_of([Vehicle(0, 1, 0.0, 4.0, is_target=True), Vehicle(1, 1, 20.0, 8.0)])
    assert lane_average_speed(w, 1) == 6.0
    with pytest.raises(ValueError):
        lane_average_speed(w, 3)


def test_lane_average_bounds_and_permutation_invariance():
    for seed in range(50):
        w = spawn_traffic(ROAD, DRIVER, 8, seed)
        avgs = lane_average_speeds(w)
        assert all(0.0 <= a <= DRIVER.v_max for a in avgs)
        ids = list(range(len(w.vehicles)))
        random.Random(seed).shuffle(ids)
        shuffled = world_of([Vehicle(i, v.lane, v.pos, v.speed) for i, v in zip(ids, w.vehicles)])
        assert lane_average_speeds(shuffled) == avgs


# --- rollouts --------------------------------------------------------------

def test_empty_road_merges_early_at_speed():
    for seed in range(10):
        out = run_rollout(spawn_traffic(ROAD, DRIVER, 0, seed), 20.0)
        assert out.merged
        assert out.merge_pos < 40.0
        assert out.merge_speed >= DRIVER.v_max * (1 - DRIVER.sigma * DRIVER.accel * DRIVER.dt / DRIVER.v_max) - 1e-9


def test_dense_traffic_late_merge_point_sometimes_fails():
    failures = sum(
        not run_rollout(spawn_traffic(ROAD, DRIVER, 18, seed), 240.0).merged for seed in range(100)
    )
    assert 0 < failures < 100


def test_zero_horizon():
    w = spawn_traffic(ROAD, DRIVER, 5, 1)
    before = w.snapshot()
    out = run_rollout(w, 100.0, max_ticks=0)
    assert not out.merged and out.ticks_elapsed == 0 and out.merge_pos is None
    assert w.snapshot() == before


def test_rollout_rejects_bad_arguments():
    w = spawn_traffic(ROAD, DRIVER, 0, 1)
    with pytest.raises(ValueError):
        run_rollout(w, 30.0)
    with pytest.raises(ValueError):
        run_rollout(w, 20.0, max_ticks=-1)


def test_stuck_target_ends_rollout():
    # wall of stopped cars beside the target: it queues at the block and gives up
    wall = [Vehicle(i, ln, 8.0 * i, 0.0) for ln in (1,) for i in range(1, 37)]
    w = world_of([Vehicle(0, 0, 250.0, 5.0, is_target=True)] + wall)
    out = run_rollout(w, 240.0, max_ticks=240)
    assert not out.merged
    assert out.ticks_elapsed < 240
    assert w.target.speed <= EPS


def test_rollout_is_deterministic():
    for seed in range(20):
        outs = [run_rollout(spawn_traffic(ROAD, DRIVER, 10, seed), 120.0) for _ in range(2)]
        assert outs[0] == outs[1]


@pytest.mark.skipif(not _fastsim.AVAILABLE, reason="numba not installed")
def test_compiled_rollout_matches_interpreted():
    for seed in range(200):
        density, mp = seed % 19, ROAD.merge_points[seed % 12]
        a, b = spawn_traffic(ROAD, DRIVER, density, seed), spawn_traffic(ROAD, DRIVER, density, seed)
        out_a = run_rollout(a, mp, compiled=False)
        out_b = run_rollout(b, mp, compiled=True)
        assert out_a == out_b
        assert a.snapshot() == b.snapshot()
        # both paths leave the random stream at the same point
        assert a.rng.random() == b.rng.random()


def test_rollout_invariants_and_no_passing_each_tick():
    for seed in range(40):
        w = spawn_traffic(ROAD, DRIVER, 12, seed)
        prev = {}

        def check(world):
            assert check_invariants(world) == []
            now = {v.id: (v.lane, v.pos) for v in world.vehicles}
            for ln in range(ROAD.lane_count):
                # vehicles that stayed in this lane keep their relative order
                stay = [i for i in now if now[i][0] == ln and prev.get(i, (None,))[0] == ln]
                assert sorted(stay, key=lambda i: now[i][1]) == sorted(stay, key=lambda i: prev[i][1])
            prev.clear()
            prev.update(now)

        prev.update({v.id: (v.lane, v.pos) for v in w.vehicles})
        run_rollout(w, ROAD.merge_points[seed % 12], on_tick=check)


def test_invariant_sweep_small():
    report = invariant_sweep(60, seed=3)
    assert report.ok and report.rollouts == 60 and report.ticks > 0


def test_check_invariants_reports_violations():
    w = world_of([Vehicle(0, 0, 290.0, 16.0, is_target=True), Vehicle(1, 1, 10.0, 1.0), Vehicle(2, 1, 12.0, 1.0)])
    problems = " ".join(check_invariants(w))
    assert "speed" in problems and "roadblock" in problems and "overlap" in problems
    assert math.isfinite(w.clock)
