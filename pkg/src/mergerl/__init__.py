"""Deep Q-learning for lane merging at a highway lane closure.

Modules:

* :mod:`mergerl.sim` - car-following / lane-change micro-simulator
* :mod:`mergerl.env` - episodic merge-decision environment
* :mod:`mergerl.neural` - small ReLU network, backprop, weight files
* :mod:`mergerl.agent` - exploration policies, replay buffer, DQN training
* :mod:`mergerl.harness` - training/evaluation runs and CSV metrics
* :mod:`mergerl.edge` - TCP decision service and client
* :mod:`mergerl.cli` - ``mergerl`` command
"""

from .agent import (
    Hyperparams,
    PolicySpec,
    ReplayBuffer,
    Transition,
    boltzmann_probs,
    greedy_rollouts,
    select_action,
    select_action_boltzmann,
    select_action_eps_greedy,
    td_target,
    train,
)
from .config import ExperimentConfig, load_config, save_config
from .env import EpisodeConfig, MergeEnv, RewardParams, compute_reward, encode_observation, observe
from .neural import (
    WeightFormatError,
    Weights,
    forward,
    gradients,
    init_network,
    load_weights,
    param_count,
    save_weights,
    sgd_batch,
    sgd_step,
)
from .sim import (
    ConfigError,
    DriverParams,
    RoadConfig,
    SimWorld,
    Vehicle,
    attempt_lane_change,
    check_invariants,
    derive_seed,
    krauss_step,
    lane_average_speed,
    run_rollout,
    spawn_traffic,
)

__version__ = "0.1.0"
