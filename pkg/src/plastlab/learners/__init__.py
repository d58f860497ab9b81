"""Backbone learners: PPO (discrete and continuous), C51, and a supervised
regression learner for the permutation probe."""

from .c51 import (
    C51Config,
    C51Learner,
    CategoricalHead,
    c51_loss,
    c51_support,
    c51_update,
    categorical_projection,
    categorical_projection_batch,
    epsilon_schedule,
)
from .common import ReplayBuffer, TrajectoryBatch, build_network, clip_gradients, gae
from .ppo import PPOConfig, PPOLearner, gaussian_policy, normalize_advantages, ppo_loss
from .regression import RegressionLearner

__all__ = [
    "C51Config",
    "C51Learner",
    "CategoricalHead",
    "PPOConfig",
    "PPOLearner",
    "RegressionLearner",
    "ReplayBuffer",
    "TrajectoryBatch",
    "build_network",
    "c51_loss",
    "c51_support",
    "c51_update",
    "categorical_projection",
    "categorical_projection_batch",
    "clip_gradients",
    "epsilon_schedule",
    "gae",
    "gaussian_policy",
    "normalize_advantages",
    "ppo_loss",
]
