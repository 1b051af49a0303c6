"""Flat experiment configuration.

A config file is a single JSON object whose keys are the field names of
:class:`ExperimentConfig`. Missing keys take their defaults; unknown keys
and ill-typed values raise :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from os import PathLike
from typing import Any, Mapping

from .agent import Hyperparams, PolicySpec
from .env import EpisodeConfig, MergeEnv, RewardParams
from .sim import ConfigError, DriverParams, RoadConfig, spawn_traffic


@dataclass(frozen=True)
class ExperimentConfig:
    # road
    lane_count: int = 3
    road_length: float = 300.0
    roadblock_pos: float = 280.0
    roadblock_lane: int = 0
    merge_spacing: float = 20.0
    merge_point_count: int = 12
    # drivers
    v_max: float = 15.0
    accel: float = 2.6
    decel: float = 4.5
    sigma: float = 0.2
    reaction_time: float = 1.0
    min_gap: float = 2.5
    dt: float = 0.5
    # reward
    r_merge_ok: float = 1.0
    r_fail: float = -2.0
    r_merge_slow: float = -1.0
    theta_avg: float = 0.5
    theta_min: float = 0.2
    theta_lane: float = 0.3
    r_congestion: float = -0.5
    # episodes
    steps_per_episode: int = 50
    obs_mode: str = "scalar"
    density: int = 10
    max_ticks: int = 240
    # learning
    episodes: int = 400
    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 32
    warmup: int = 100
    buffer_capacity: int = 10_000
    hidden: tuple[int, ...] = (24, 24)
    target_sync: int = 0
    # exploration
    policy: str = "eps_greedy"
    epsilon: float = 0.1
    tau: float = 1.0
    # runs
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    eval_episodes: int = 10
    tail_fraction: float = 0.25
    out_dir: str = "runs"

    def road(self) -> RoadConfig:
        return RoadConfig(self.lane_count, self.road_length, self.roadblock_pos,
                          self.roadblock_lane, self.merge_spacing, self.merge_point_count)

    def driver(self) -> DriverParams:
        return DriverParams(self.v_max, self.accel, self.decel, self.sigma,
                            self.reaction_time, self.min_gap, self.dt)

    def reward(self) -> RewardParams:
        return RewardParams(self.r_merge_ok, self.r_fail, self.r_merge_slow, self.theta_avg,
                            self.theta_min, self.theta_lane, self.r_congestion)

    def episode(self) -> EpisodeConfig:
        return EpisodeConfig(self.steps_per_episode, self.obs_mode, self.density, 0, self.max_ticks)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.gamma, self.lr, self.batch_size, self.warmup, self.episodes,
                           self.steps_per_episode, self.buffer_capacity, self.hidden, self.target_sync)

    def policy_spec(self, kind: str | None = None) -> PolicySpec:
        return PolicySpec(kind or self.policy, self.epsilon, self.tau)

    def make_env(self) -> MergeEnv:
        return MergeEnv(self.episode(), self.road(), self.driver(), self.reward())

    def validate(self) -> "ExperimentConfig":
        """Build every component once so that bad values fail before a run starts."""
        self.make_env()
        self.hyperparams()
        self.policy_spec()
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError("hidden: widths must be positive")
        if self.eval_episodes < 0:
            raise ConfigError("eval_episodes must be >= 0")
        if not 0 < self.tail_fraction <= 1:
            raise ConfigError("tail_fraction must lie in (0, 1]")
        # spawn capacity at the configured density
        spawn_traffic(self.road(), self.driver(), self.density, 0)
        return self

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return from_mapping({**to_mapping(self), **changes})


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(name: str, value: Any) -> Any:
    default = _FIELDS[name].default
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, (list, tuple)) and all(
            isinstance(v, int) and not isinstance(v, bool) for v in value
        )
        value = tuple(value) if ok else value
    else:  # pragma: no cover
        ok = True
    if not ok:
        raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
    return value


def from_mapping(data: Mapping[str, Any]) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in data.items()})


def to_mapping(cfg: ExperimentConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def load_config(path: str | PathLike) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return from_mapping(data)


def save_config(cfg: ExperimentConfig, path: str | PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(to_mapping(cfg), f, indent=2)
        f.write("\n")
