"""Episodic merge-decision environment on top of the simulator.

Every action picks the merge point for one full rollout on a freshly
spawned world. The observation returned after a step describes the world
as the rollout left it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sim import (
    DEFAULT_MAX_TICKS,
    ConfigError,
    DriverParams,
    RoadConfig,
    RolloutOutcome,
    SimWorld,
    derive_seed,
    lane_average_speeds,
    run_rollout,
    spawn_traffic,
)

OBS_MODES = ("scalar", "full5")


class EpisodeFinished(RuntimeError):
    """``step`` was called on an episode that is already done (or never reset)."""


@dataclass(frozen=True)
class RewardParams:
    r_merge_ok: float = 1.0
    r_fail: float = -2.0
    r_merge_slow: float = -1.0
    theta_avg: float = 0.5
    theta_min: float = 0.2
    theta_lane: float = 0.3
    r_congestion: float = -0.5

    def __post_init__(self):
        if not self.r_merge_ok > 0:
            raise ConfigError("r_merge_ok must be > 0")
        if not self.r_fail < self.r_merge_slow < 0:
            raise ConfigError("rewards must satisfy r_fail < r_merge_slow < 0")
        if not 0 < self.theta_min < self.theta_avg <= 1:
            raise ConfigError("thresholds must satisfy 0 < theta_min < theta_avg <= 1")


@dataclass(frozen=True)
class EpisodeConfig:
    steps_per_episode: int = 50
    obs_mode: str = "scalar"
    density: int = 10
    seed: int = 0
    max_ticks: int = DEFAULT_MAX_TICKS

    def __post_init__(self):
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1")
        if self.obs_mode not in OBS_MODES:
            raise ConfigError(f"obs_mode must be one of {OBS_MODES}, got {self.obs_mode!r}")
        if self.density < 0:
            raise ConfigError("density must be >= 0")


@dataclass
class State:
    d_c: float
    d_f: float
    v_eh: float
    x_p: float
    y_p: int
    lane_avg: list[float]


def observe(world: SimWorld) -> State:
    cfg = world.config
    target = world.target
    ahead = [v for v in world.vehicles if v.lane == target.lane and v.pos > target.pos]
    if ahead:
        leader = min(ahead, key=lambda v: v.pos)
        d_f = leader.pos - leader.length - target.pos
    elif target.lane == cfg.roadblock_lane:
        d_f = cfg.roadblock_pos - target.pos
    else:
        d_f = cfg.road_length - target.pos
    return State(
        d_c=max(0.0, cfg.roadblock_pos - target.pos),
        d_f=max(0.0, d_f),
        v_eh=target.speed,
        x_p=target.pos,
        y_p=target.lane,
        lane_avg=lane_average_speeds(world),
    )


def encode_observation(state: State, mode: str, road: RoadConfig, v_max: float) -> np.ndarray:
    """Network input in ``[0, 1]``.

    ``scalar``: mean detector speed over lanes divided by ``v_max``.
    ``full5``: the target's distance to the block, gap to its leader,
    speed, longitudinal position and lane, each normalized.
    """
    if mode == "scalar":
        values = [math.fsum(state.lane_avg) / len(state.lane_avg) / v_max]
    elif mode == "full5":
        values = [
            state.d_c / road.road_length,
            state.d_f / road.road_length,
            state.v_eh / v_max,
            state.x_p / road.road_length,
            state.y_p / (road.lane_count - 1),
        ]
    else:
        raise ValueError(f"unknown observation mode {mode!r}")
    return np.clip(np.array(values, dtype=np.float64), 0.0, 1.0)


def obs_width(mode: str) -> int:
    return {"scalar": 1, "full5": 5}[mode]


def compute_reward(outcome: RolloutOutcome, p: RewardParams, v_max: float) -> float:
    """Merge reward plus an additive congestion penalty.

    Merge speeds between the slow and the average threshold interpolate
    linearly between ``r_merge_slow`` and ``r_merge_ok``.
    """
    if not outcome.merged:
        r = p.r_fail
    else:
        v_avg, v_min = p.theta_avg * v_max, p.theta_min * v_max
        speed = outcome.merge_speed
        if speed >= v_avg:
            r = p.r_merge_ok
        elif speed < v_min:
            r = p.r_merge_slow
        else:
            frac = (speed - v_min) / (v_avg - v_min)
            r = p.r_merge_slow + frac * (p.r_merge_ok - p.r_merge_slow)
    if min(outcome.lane_avg_speeds) < p.theta_lane * v_max:
        r += p.r_congestion
    return r


class MergeEnv:
    """Gym-style environment: ``reset() -> obs``, ``step(a) -> (obs, r, done, info)``.

    ``info`` is the :class:`~mergerl.sim.RolloutOutcome` of the step.
    """

    def __init__(
        self,
        cfg: EpisodeConfig = EpisodeConfig(),
        road: RoadConfig = RoadConfig(),
        driver: DriverParams = DriverParams(),
        reward: RewardParams = RewardParams(),
    ):
        self.cfg = cfg
        self.road = road
        self.driver = driver
        self.reward_params = reward
        self.n_actions = road.merge_point_count
        self.obs_width = obs_width(cfg.obs_mode)
        self.world: Optional[SimWorld] = None
        self.episode_seed: Optional[int] = None
        self.steps = 0
        self.done = True

    def merge_position(self, action: int) -> float:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        return self.road.merge_spacing * (action + 1)

    def _encode(self) -> np.ndarray:
        return encode_observation(observe(self.world), self.cfg.obs_mode, self.road, self.driver.v_max)

    def _spawn(self, index: int) -> SimWorld:
        seed = derive_seed(self.episode_seed, index)
        return spawn_traffic(self.road, self.driver, self.cfg.density, seed)

    def reset(self, episode_seed: Optional[int] = None) -> np.ndarray:
        self.episode_seed = self.cfg.seed if episode_seed is None else episode_seed
        self.steps = 0
        self.done = False
        self.world = self._spawn(0)
        return self._encode()

    def step(self, action: int) -> tuple[np.ndarray, float, bool, RolloutOutcome]:
        if self.done:
            raise EpisodeFinished("step() called on a finished episode; call reset() first")
        merge_point = self.merge_position(int(action))
        self.world = self._spawn(self.steps + 1)
        outcome = run_rollout(self.world, merge_point, self.cfg.max_ticks)
        reward = compute_reward(outcome, self.reward_params, self.driver.v_max)
        self.steps += 1
        self.done = self.steps == self.cfg.steps_per_episode
        return self._encode(), reward, self.done, outcome
