"""Three-lane highway micro-simulator with a lane closure.

Vehicles follow a Krauss-style safe-speed law. One lane is closed at
``roadblock_pos``; the closure behaves as a stationary zero-length leader.
The controlled (target) vehicle starts at the tail of the closed lane and
tries to change lanes once it passes a chosen merge point.

Worlds are mutable: the stepping functions update a world in place and
return it for convenience. Use :meth:`SimWorld.copy` for a snapshot.
"""

from __future__ import annotations

import bisect
import copy
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _fastsim

# tolerance used by the invariant checks and the hard spacing clamp
EPS = 1e-9
STUCK_TICKS = 5
DEFAULT_MAX_TICKS = 240


class ConfigError(ValueError):
    """Invalid configuration value."""


@dataclass(frozen=True)
class RoadConfig:
    lane_count: int = 3
    road_length: float = 300.0
    roadblock_pos: float = 280.0
    roadblock_lane: int = 0
    merge_spacing: float = 20.0
    merge_point_count: int = 12

    def __post_init__(self):
        if self.lane_count < 2:
            raise ConfigError("lane_count must be >= 2")
        if not 0 < self.roadblock_pos <= self.road_length:
            raise ConfigError("roadblock_pos must lie in (0, road_length]")
        if not 0 <= self.roadblock_lane < self.lane_count:
            raise ConfigError("roadblock_lane out of range")
        if self.merge_spacing <= 0 or self.merge_point_count < 1:
            raise ConfigError("merge_spacing and merge_point_count must be positive")
        if self.merge_point_count * self.merge_spacing > self.roadblock_pos:
            raise ConfigError("merge points must lie before the roadblock")

    @property
    def merge_points(self) -> tuple[float, ...]:
        return tuple(self.merge_spacing * k for k in range(1, self.merge_point_count + 1))

    def open_neighbours(self, lane: int) -> list[int]:
        """Adjacent lanes of ``lane`` that are not closed, lowest index first."""
        return [
            n for n in (lane - 1, lane + 1)
            if 0 <= n < self.lane_count and n != self.roadblock_lane
        ]


@dataclass(frozen=True)
class DriverParams:
    v_max: float = 15.0
    accel: float = 2.6
    decel: float = 4.5
    sigma: float = 0.2
    reaction_time: float = 1.0
    min_gap: float = 2.5
    dt: float = 0.5

    def __post_init__(self):
        for name in ("v_max", "accel", "decel", "reaction_time", "min_gap", "dt"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.sigma <= 1.0:
            raise ConfigError("sigma must lie in [0, 1]")


@dataclass(slots=True)
class Vehicle:
    id: int
    lane: int
    pos: float
    speed: float
    length: float = 5.0
    is_target: bool = False


@dataclass
class SimWorld:
    config: RoadConfig
    params: DriverParams
    vehicles: list[Vehicle]
    rng: np.random.Generator
    clock: float = 0.0
    # one noise draw per id slot and tick, so removals never shift the stream
    n_slots: int = 0

    def __post_init__(self):
        self.n_slots = max(self.n_slots, 1 + max((v.id for v in self.vehicles), default=-1))

    def copy(self) -> "SimWorld":
        return copy.deepcopy(self)

    def sort(self) -> None:
        self.vehicles.sort(key=_sort_key)

    @property
    def target(self) -> Vehicle:
        for v in self.vehicles:
            if v.is_target:
                return v
        raise LookupError("world has no target vehicle")

    def vehicle(self, vehicle_id: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vehicle_id:
                return v
        raise KeyError(f"unknown vehicle id {vehicle_id}")

    def lane(self, lane: int) -> list[Vehicle]:
        return [v for v in self.vehicles if v.lane == lane]

    def snapshot(self) -> tuple:
        """Hashable kinematic state, used for determinism checks."""
        return (self.clock,) + tuple(
            (v.id, v.lane, v.pos, v.speed) for v in self.vehicles
        )


@dataclass
class RolloutOutcome:
    merged: bool
    merge_pos: Optional[float]
    merge_speed: Optional[float]
    lane_avg_speeds: list[float]
    target_final_pos: float
    ticks_elapsed: int


def derive_seed(*keys: int) -> int:
    """Mix integers into one 64-bit seed (stable across runs and platforms)."""
    ss = np.random.SeedSequence([k & ((1 << 64) - 1) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0])


def _rng_for(seed: int) -> np.random.Generator:
    # default_rng rejects negative ints; fold every integer into 128 bits
    return np.random.default_rng(int(seed) & ((1 << 128) - 1))


def _place(rng: np.random.Generator, n: int, lo: float, hi: float, spacing: float) -> np.ndarray:
    """``n`` sorted uniform positions in [lo, hi] pairwise at least ``spacing`` apart."""
    if n == 0:
        return np.empty(0)
    slack = (hi - lo) - (n - 1) * spacing
    if slack < 0:
        raise ConfigError(
            f"cannot place {n} vehicles in [{lo}, {hi}] with spacing {spacing}"
        )
    return lo + np.sort(rng.uniform(0.0, slack, size=n)) + spacing * np.arange(n)


def spawn_traffic(
    config: RoadConfig,
    params: DriverParams,
    density: int,
    seed: int,
    length: float = 5.0,
) -> SimWorld:
    """Build a randomized world.

    The target sits at the tail of the closed lane (front bumper at 0)
    cruising at ``v_max``. Each lane receives ``density`` background
    vehicles with front bumpers in ``[0, roadblock_pos / 2]`` and speeds
    uniform in ``[v_max / 2, v_max]``.
    """
    if density < 0:
        raise ConfigError("density must be >= 0")
    rng = _rng_for(seed)
    spacing = length + params.min_gap
    hi = config.roadblock_pos / 2
    vehicles = [Vehicle(0, config.roadblock_lane, 0.0, params.v_max, length, True)]
    next_id = 1
    for lane in range(config.lane_count):
        lo = spacing if lane == config.roadblock_lane else 0.0
        positions = _place(rng, density, lo, hi, spacing)
        speeds = rng.uniform(0.5 * params.v_max, params.v_max, size=density)
        for pos, speed in zip(positions, speeds):
            vehicles.append(Vehicle(next_id, lane, float(pos), float(speed), length))
            next_id += 1
    world = SimWorld(config, params, vehicles, rng)
    world.sort()
    return world


def krauss_step(world: SimWorld) -> SimWorld:
    """Advance every vehicle by one tick of ``params.dt`` seconds.

    Speeds follow the safe-speed law
    ``v_safe = v_l + (g - v_l*tau) / ((v + v_l) / (2b) + tau)``, where ``g``
    is the bumper gap minus ``min_gap``, followed by a random dawdle of up
    to ``sigma*a*dt``. The leader's previous-tick state enters ``v_safe``;
    the new position is additionally clamped so the gap to the leader's
    updated position never drops below ``min_gap``.
    """
    cfg, p = world.config, world.params
    dt, a, b, tau, gap0, vmax = p.dt, p.accel, p.decel, p.reaction_time, p.min_gap, p.v_max
    dawdle = p.sigma * a * dt
    vehicles = world.vehicles
    eta = world.rng.random(world.n_slots)

    lane = None
    has_leader = False
    l_pos = l_new = l_len = l_speed = 0.0
    # list is sorted by (lane, pos): walking backwards visits each lane front to back
    for i in range(len(vehicles) - 1, -1, -1):
        veh = vehicles[i]
        if veh.lane != lane:
            lane = veh.lane
            has_leader = lane == cfg.roadblock_lane
            l_pos = l_new = cfg.roadblock_pos
            l_len = l_speed = 0.0
        v = veh.speed
        v_des = v + a * dt
        if v_des > vmax:
            v_des = vmax
        if has_leader:
            g = l_pos - l_len - veh.pos - gap0
            v_safe = l_speed + (g - l_speed * tau) / ((v + l_speed) / (2 * b) + tau)
            if v_safe < v_des:
                v_des = v_safe
        v_new = v_des - dawdle * eta[veh.id]
        if v_new < 0.0:
            v_new = 0.0
        old_pos = veh.pos
        new_pos = old_pos + v_new * dt
        if has_leader:
            limit = l_new - l_len - gap0
            if new_pos > limit:
                new_pos = max(old_pos, limit)
                v_new = (new_pos - old_pos) / dt
        has_leader = True
        l_pos, l_new, l_len, l_speed = old_pos, new_pos, veh.length, v
        veh.pos = new_pos
        veh.speed = v_new

    # vehicles leave the network at the end of the road
    if any(v.pos > cfg.road_length and not v.is_target for v in vehicles):
        world.vehicles = [v for v in vehicles if v.is_target or v.pos <= cfg.road_length]
    world.clock += dt
    return world


def _sort_key(v: Vehicle) -> tuple[int, float]:
    return v.lane, v.pos


def _gaps(world: SimWorld, veh: Vehicle, lane: int) -> tuple[float, float, float]:
    """(lead gap, lag gap, lag speed) seen by ``veh`` if it stood in ``lane``."""
    cfg = world.config
    lead_gap = lag_gap = math.inf
    lag_speed = 0.0
    if lane == cfg.roadblock_lane:
        # beyond the closure the closed lane has no road to move into
        lead_gap = cfg.roadblock_pos - veh.pos if veh.pos <= cfg.roadblock_pos else -math.inf
    vehicles = world.vehicles
    i = bisect.bisect_left(vehicles, (lane, veh.pos), key=_sort_key)
    if i < len(vehicles) and vehicles[i].lane == lane:
        lead = vehicles[i]
        lead_gap = min(lead_gap, lead.pos - lead.length - veh.pos)
    if i > 0 and vehicles[i - 1].lane == lane:
        lag = vehicles[i - 1]
        lag_gap, lag_speed = veh.pos - veh.length - lag.pos, lag.speed
    return lead_gap, lag_gap, lag_speed


def _accepts(p: DriverParams, veh: Vehicle, gaps: tuple[float, float, float]) -> bool:
    lead_gap, lag_gap, lag_speed = gaps
    return lead_gap >= p.min_gap + veh.speed * p.reaction_time and lag_gap >= p.min_gap + lag_speed * p.reaction_time


def attempt_lane_change(world: SimWorld, vehicle_id: int, target_lane: int) -> tuple[SimWorld, bool]:
    """Move a vehicle sideways if both gaps in ``target_lane`` are safe.

    The lead gap must be at least ``min_gap + v*reaction_time`` and the lag
    gap at least ``min_gap + v_lag*reaction_time``. Position and speed are kept.
    """
    veh = world.vehicle(vehicle_id)
    if abs(target_lane - veh.lane) != 1 or not 0 <= target_lane < world.config.lane_count:
        raise ValueError(f"lane {target_lane} is not adjacent to lane {veh.lane}")
    ok = _accepts(world.params, veh, _gaps(world, veh, target_lane))
    if ok:
        veh.lane = target_lane
        world.sort()
    return world, ok


def try_merge(world: SimWorld, veh: Vehicle) -> bool:
    """Attempt to leave the closed lane toward the best open neighbour.

    With two open neighbours the one with the larger lead gap is tried
    first; ties go to the lower lane index.
    """
    options = [(ln, _gaps(world, veh, ln)) for ln in world.config.open_neighbours(veh.lane)]
    options.sort(key=lambda o: (-o[1][0], o[0]))
    for ln, gaps in options:
        if _accepts(world.params, veh, gaps):
            veh.lane = ln
            world.sort()
            return True
    return False


def lane_average_speed(world: SimWorld, lane: int) -> float:
    """Detector reading: mean speed in ``lane``, ``v_max`` when empty."""
    if not 0 <= lane < world.config.lane_count:
        raise ValueError(f"invalid lane {lane}")
    speeds = [v.speed for v in world.vehicles if v.lane == lane]
    if not speeds:
        return world.params.v_max
    return math.fsum(speeds) / len(speeds)


def lane_average_speeds(world: SimWorld) -> list[float]:
    return [lane_average_speed(world, ln) for ln in range(world.config.lane_count)]


def _merge_background(world: SimWorld) -> None:
    # background cars in the closed lane merge as soon as a gap opens, front car first
    blocked = world.config.roadblock_lane
    queue = [v for v in world.vehicles if v.lane == blocked and not v.is_target]
    for veh in reversed(queue):
        try_merge(world, veh)


def run_rollout(
    world: SimWorld,
    merge_point: float,
    max_ticks: int = DEFAULT_MAX_TICKS,
    on_tick: Optional[Callable[[SimWorld], None]] = None,
    compiled: Optional[bool] = None,
) -> RolloutOutcome:
    """Drive the world until the target merges, gets stuck, or time runs out.

    Each tick: car-following step, background merges, then (once the
    target has reached ``merge_point``) one merge attempt by the target.
    The target counts as stuck after ``STUCK_TICKS`` consecutive ticks at
    standstill in the closed lane. ``on_tick`` is called after every tick.

    Without ``on_tick`` the loop runs in a compiled kernel when numba is
    available; both paths give bit-identical results and leave the world
    (including its random stream) in the same state.
    """
    cfg = world.config
    if not any(math.isclose(merge_point, m) for m in cfg.merge_points):
        raise ValueError(f"invalid merge point {merge_point}; expected one of {cfg.merge_points}")
    if max_ticks < 0:
        raise ValueError("max_ticks must be >= 0")
    if compiled is None:
        compiled = _fastsim.AVAILABLE and on_tick is None
    if compiled:
        if on_tick is not None:
            raise ValueError("on_tick requires the interpreted rollout")
        return _run_compiled(world, merge_point, max_ticks)
    target = world.target
    merged = False
    merge_pos = merge_speed = None
    stopped = 0
    ticks = 0
    while ticks < max_ticks:
        krauss_step(world)
        _merge_background(world)
        ticks += 1
        if target.pos >= merge_point and try_merge(world, target):
            merged = True
            merge_pos, merge_speed = target.pos, target.speed
        if on_tick is not None:
            on_tick(world)
        if merged:
            break
        stopped = stopped + 1 if target.speed <= EPS else 0
        if stopped >= STUCK_TICKS:
            break
    return RolloutOutcome(
        merged=merged,
        merge_pos=merge_pos,
        merge_speed=merge_speed,
        lane_avg_speeds=lane_average_speeds(world),
        target_final_pos=target.pos,
        ticks_elapsed=ticks,
    )


def _run_compiled(world: SimWorld, merge_point: float, max_ticks: int) -> RolloutOutcome:
    cfg, p = world.config, world.params
    n = world.n_slots
    lane = np.zeros(n, dtype=np.int64)
    pos = np.zeros(n)
    speed = np.zeros(n)
    length = np.ones(n)
    alive = np.zeros(n, dtype=bool)
    for v in world.vehicles:
        lane[v.id], pos[v.id], speed[v.id], length[v.id], alive[v.id] = v.lane, v.pos, v.speed, v.length, True
    target = world.target
    state = world.rng.bit_generator.state
    eta = world.rng.random((max_ticks, n))
    ticks, merged, merge_pos, merge_speed, clock = _fastsim.rollout_kernel(
        lane, pos, speed, length, alive, target.id, eta, float(merge_point), max_ticks,
        cfg.lane_count, cfg.road_length, cfg.roadblock_pos, cfg.roadblock_lane,
        p.v_max, p.accel, p.decel, p.sigma, p.reaction_time, p.min_gap, p.dt, world.clock, STUCK_TICKS, EPS,
    )
    # consume exactly the draws the tick-by-tick loop would have made
    world.rng.bit_generator.state = state
    world.rng.random(ticks * n)
    world.clock = clock
    kept = []
    for v in world.vehicles:
        if alive[v.id]:
            v.lane, v.pos, v.speed = int(lane[v.id]), float(pos[v.id]), float(speed[v.id])
            kept.append(v)
    world.vehicles = kept
    world.sort()
    return RolloutOutcome(
        merged=bool(merged),
        merge_pos=float(merge_pos) if merged else None,
        merge_speed=float(merge_speed) if merged else None,
        lane_avg_speeds=lane_average_speeds(world),
        target_final_pos=target.pos,
        ticks_elapsed=int(ticks),
    )


def check_invariants(world: SimWorld) -> list[str]:
    """Return a description of every violated safety invariant (empty if none)."""
    cfg, p = world.config, world.params
    problems = []
    prev = None
    for v in world.vehicles:
        if not -EPS <= v.speed <= p.v_max + EPS:
            problems.append(f"vehicle {v.id} speed {v.speed} outside [0, {p.v_max}]")
        if v.lane == cfg.roadblock_lane and v.pos > cfg.roadblock_pos + EPS:
            problems.append(f"vehicle {v.id} passed the roadblock at {v.pos}")
        if prev is not None and prev.lane == v.lane:
            if prev.pos + p.min_gap > v.pos - v.length + EPS:
                problems.append(f"vehicles {prev.id} and {v.id} overlap in lane {v.lane}")
        prev = v
    order = [(v.lane, v.pos) for v in world.vehicles]
    if order != sorted(order):
        problems.append("vehicle list not sorted by (lane, pos)")
    return problems


@dataclass
class SweepReport:
    rollouts: int
    ticks: int
    violations: list[str]
    nondeterministic: list[int]

    @property
    def ok(self) -> bool:
        return not self.violations and not self.nondeterministic


def invariant_sweep(
    rollouts: int = 1000,
    seed: int = 0,
    config: Optional[RoadConfig] = None,
    params: Optional[DriverParams] = None,
    max_density: int = 18,
    max_ticks: int = DEFAULT_MAX_TICKS,
) -> SweepReport:
    """Run seeded rollouts over all merge points and densities ``0..max_density``.

    Every tick of every rollout is checked with :func:`check_invariants`.
    Each rollout is then repeated, tick by tick and through the compiled
    path when available, and must reproduce the same trajectory bit for bit.
    """
    config = config or RoadConfig()
    params = params or DriverParams()
    points = config.merge_points
    violations: list[str] = []
    nondeterministic: list[int] = []
    total_ticks = 0
    for i in range(rollouts):
        world_seed = derive_seed(seed, i)
        density = i % (max_density + 1)
        merge_point = points[(i // (max_density + 1)) % len(points)]

        def run(compiled: bool, check: bool):
            world = spawn_traffic(config, params, density, world_seed)
            trace: list[tuple] = []

            def on_tick(w: SimWorld) -> None:
                trace.append(w.snapshot())
                if check:
                    violations.extend(f"rollout {i} t={w.clock:g}: {msg}" for msg in check_invariants(w))

            outcome = run_rollout(world, merge_point, max_ticks, None if compiled else on_tick, compiled)
            return outcome, world.snapshot(), trace

        first, final, trace = run(False, True)
        total_ticks += first.ticks_elapsed
        again = run(False, False)
        if again != (first, final, trace):
            nondeterministic.append(i)
        elif _fastsim.AVAILABLE:
            fast, fast_final, _ = run(True, False)
            if (fast, fast_final) != (first, final):
                nondeterministic.append(i)
    return SweepReport(rollouts, total_ticks, violations, nondeterministic)
