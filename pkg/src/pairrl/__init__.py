"""Phasic online PPO with offline weighted behavior cloning, task reduction and
hindsight relabeling for sparse-reward goal-conditioned MDPs."""
from .config import PhaseConfig
from .driver import RunReport, evaluate, run_baseline, run_pair
from .envs import make_chain_mdp, make_env, make_grid_maze, make_point_pusher
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "PhaseConfig", "RunReport", "evaluate", "make_chain_mdp", "make_env", "make_grid_maze",
    "make_point_pusher", "run_baseline", "run_pair",
]
