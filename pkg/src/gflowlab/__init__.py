"""Exact, differentiable GFlowNet experiments on pointed DAGs and hypergrids."""

from gflowlab.dag import PointedDag, Trajectory, enumerate_trajectories
from gflowlab.exact import exact_terminal_distribution, jsd, kl, normalized_reward, tv
from gflowlab.hypergrid import GridSpec, HideMode, HidingMask, RewardAccess, RewardTable, build_grid, length_mask, sample_hidden_states
from gflowlab.objectives import db_loss, tb_loss, trajectory_db_loss
from gflowlab.policy import Parametrization, PolicyConfig, edge_policy, init_params
from gflowlab.trainer import TrainConfig, train, train_seed

__all__ = [
    "PointedDag", "Trajectory", "enumerate_trajectories",
    "exact_terminal_distribution", "jsd", "kl", "tv", "normalized_reward",
    "GridSpec", "HideMode", "HidingMask", "RewardAccess", "RewardTable", "build_grid", "length_mask", "sample_hidden_states",
    "db_loss", "tb_loss", "trajectory_db_loss",
    "Parametrization", "PolicyConfig", "edge_policy", "init_params",
    "TrainConfig", "train", "train_seed",
]
