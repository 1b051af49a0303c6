"""
A tour of the merge simulator
=============================

Spawn a world, watch one rollout tick by tick, then sweep every merge
point to see how the choice of merge position shapes the reward.
"""

import numpy as np

from mergerl.env import EpisodeConfig, MergeEnv
from mergerl.sim import DriverParams, RoadConfig, check_invariants, lane_average_speeds, run_rollout, spawn_traffic

road, driver = RoadConfig(), DriverParams()
print("merge points:", road.merge_points)

# A world with 10 background cars per lane. The target (id 0) starts at the
# tail of the closed lane at full speed.
world = spawn_traffic(road, driver, density=10, seed=3)
print(f"{len(world.vehicles)} vehicles, lane averages {np.round(lane_average_speeds(world), 2)}")

# Follow the target until it merges. on_tick sees the world after every tick,
# so it is also a convenient place to assert the safety invariants.
def show(w):
    t = w.target
    assert not check_invariants(w)
    print(f"  t={w.clock:5.1f}s  lane {t.lane}  pos {t.pos:6.1f}  speed {t.speed:5.2f}")

out = run_rollout(world, merge_point=100.0, on_tick=show)
print("merged:", out.merged, "at", out.merge_pos, "with speed", out.merge_speed)

# %%
# Reward landscape
# ----------------
# One environment step is one rollout on a fresh world. Averaging the reward
# of each action over many worlds shows which merge points pay off.
env = MergeEnv(EpisodeConfig(steps_per_episode=200, density=10))
for action in range(env.n_actions):
    env.reset(episode_seed=1000 + action)
    rewards = [env.step(action)[1] for _ in range(200)]
    print(f"merge at {env.merge_position(action):5.0f}: mean reward {np.mean(rewards):+.3f}")
