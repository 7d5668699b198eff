"""Scheduling and optimisation knobs shared by the training modules."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import InvalidConfigError

COMPOSE_OPS = ("multiply", "min", "average")
SEARCH_STRATEGIES = ("exhaustive", "grid", "cross-entropy-refine")


@dataclass
class PhaseConfig:
    # online phase
    n_worker: int = 8
    n_steps: int = 256
    n_epoch: int = 10
    n_batch: int = 32
    n_online: int = 8 * 256 * 4
    lr: float = 2.5e-4
    alpha: float = 0.5
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5
    intrinsic: bool = True
    normalize_advantages: bool = True
    # offline phase
    m_epoch: int = 10
    m: int = 64
    beta: float = 1.0
    weight_clip: float = 20.0
    persistent_dataset: bool = False
    # joint (SIL / SIR) modes
    c_sl: float = 0.1
    success_capacity: int = 10_000
    # augmentation
    reduction: bool = True
    compose: str = "multiply"
    search_strategy: str = "exhaustive"
    n_candidates: int = 64
    reduction_threshold: float = 0.1
    reduction_fraction: float = 0.25
    aug_budget_fraction: float = 0.25
    failure_capacity: int = 4096
    relabel_mode: str = "final"
    # approximators
    approximator: str = "mlp"
    hidden: tuple = (64, 64)
    # run control
    budget: int = 400_000
    eval_every: int = 1
    eval_episodes: int = 100
    curriculum: bool = False
    n_bands: int = 4
    curriculum_window: int = 200
    seed: int = 0

    @property
    def chunk(self) -> int:
        return self.n_worker * self.n_steps

    def validate(self) -> "PhaseConfig":
        positive = ("n_worker", "n_steps", "n_epoch", "n_batch", "n_online", "m_epoch", "m",
                    "budget", "eval_every", "eval_episodes", "n_candidates", "success_capacity",
                    "failure_capacity", "n_bands", "curriculum_window")
        for name in positive:
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr", "beta", "clip_eps", "weight_clip"):
            if not getattr(self, name) > 0:
                raise InvalidConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_online % self.chunk:
            raise InvalidConfigError(
                f"n_online={self.n_online} is not a multiple of n_worker*n_steps={self.chunk}")
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidConfigError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfigError("lam must lie in [0, 1]")
        for name in ("alpha", "ent_coef", "c_sl", "max_grad_norm"):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be non-negative")
        for name in ("reduction_threshold", "reduction_fraction", "aug_budget_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfigError(f"{name} must lie in [0, 1]")
        if self.compose not in COMPOSE_OPS:
            raise InvalidConfigError(f"compose must be one of {COMPOSE_OPS}")
        if self.search_strategy not in SEARCH_STRATEGIES:
            raise InvalidConfigError(f"search_strategy must be one of {SEARCH_STRATEGIES}")
        if self.relabel_mode not in ("final", "random"):
            raise InvalidConfigError("relabel_mode must be 'final' or 'random'")
        if self.approximator not in ("mlp", "tabular"):
            raise InvalidConfigError("approximator must be 'mlp' or 'tabular'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}
