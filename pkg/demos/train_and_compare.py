"""
Training and comparing exploration policies
===========================================

Train one DQN agent with epsilon-greedy exploration and one with Boltzmann
exploration on the same seeds, then evaluate both greedily.

Run with ``--quick`` for a small configuration that finishes in seconds.
The full run (400 episodes x 50 steps per agent, 5 seeds) takes a few
minutes on one core.
"""

import argparse
import tempfile

from mergerl.config import ExperimentConfig
from mergerl.harness import compare_policies, episode_rewards, read_metrics

parser = argparse.ArgumentParser()
parser.add_argument("--quick", action="store_true")
parser.add_argument("--out", default=None)
args = parser.parse_args()

cfg = ExperimentConfig()
if args.quick:
    cfg = cfg.replace(episodes=20, eval_episodes=2)
out = args.out or tempfile.mkdtemp(prefix="mergerl-")
print(f"{cfg.episodes} episodes x {cfg.steps_per_episode} steps per run, writing to {out}")

report = compare_policies(cfg, cfg.seeds, out)

# Per-seed greedy evaluation: mean episode reward of each trained model.
eps = next(s for s in report.summaries if s.policy == "eps_greedy")
boltz = next(s for s in report.summaries if s.policy == "boltzmann")
print("seed   eps_greedy   boltzmann")
for seed in cfg.seeds:
    print(f"{seed:4d}   {eps.eval_by_seed[seed]:10.3f}   {boltz.eval_by_seed[seed]:9.3f}")

# Training curves live in the CSVs; the tail is the last quarter of episodes.
for s in report.summaries:
    print(f"{s.policy:>10}: training tail {s.tail_mean:.3f} +/- {s.tail_std:.3f}, eval {s.eval_mean:.3f}")
print("verdict:", report.verdict)

curve = episode_rewards(read_metrics(f"{out}/eps_greedy-s{cfg.seeds[0]}.csv"))
print("first/last episode reward (eps_greedy, first seed):", round(curve[0], 2), round(curve[-1], 2))
