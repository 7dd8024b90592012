"""Ensemble-critic training harness on a toy continuous-control task."""

from .agent import (
    SquashedGaussianPolicy,
    compute_target,
    critic_gradient_step,
    make_critic_ensemble,
    policy_update,
    select_critics,
    target_polyak,
)
from .config import RedqConfig
from .env import ToyEnv, toy_env_step
from .replay import Batch, ReplayBuffer
from .tabular import TabularEnsemble
from .train import RunResult, metrics_csv, train_run

__all__ = [
    "Batch",
    "RedqConfig",
    "ReplayBuffer",
    "RunResult",
    "SquashedGaussianPolicy",
    "TabularEnsemble",
    "ToyEnv",
    "compute_target",
    "critic_gradient_step",
    "make_critic_ensemble",
    "metrics_csv",
    "policy_update",
    "select_critics",
    "target_polyak",
    "toy_env_step",
    "train_run",
]
