"""Dueling double DQL harness and toy environments."""

from .agent import (
    DuelHeads,
    ExplorationSchedule,
    RLConfig,
    RLReport,
    act,
    aggregate,
    ddql_update,
    double_dqn_targets,
    evaluate,
    oracle_scores,
    q_values,
    run_episode,
    slope,
    train_loop,
)
from .envs import ENVIRONMENTS, DodgeLine, Gather, TrackAndShoot, make_env
from .mlp import ACTIVATIONS, MLP
from .replay import ReplayBuffer, Transition
