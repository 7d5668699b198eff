"""Offline SL phase: success dataset assembly and advantage-weighted BC."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .approximator import Adam, Approximator, atomic_write_text, clip_grad_norm, gradient, loss_value
from .config import PhaseConfig
from .envs import GoalMdp, Trajectory
from .errors import ContractViolationError, InvalidParameterError

WEIGHTED_BC = "weighted-bc"
GCSL_PLAIN = "gcsl-plain"


@dataclass
class SuccessDataset:
    """Successful demonstrations with one advantage-like annotation per step."""

    trajectories: list = field(default_factory=list)
    annotations: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_steps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def provenance_counts(self) -> dict:
        return dict(Counter(t.provenance for t in self.trajectories))

    def clear(self) -> None:
        self.trajectories.clear()
        self.annotations.clear()

    def extend(self, other: "SuccessDataset") -> None:
        self.trajectories.extend(other.trajectories)
        self.annotations.extend(other.annotations)

    def flat(self, env: GoalMdp):
        """``(states, goals, actions, annotations)`` over every stored step."""
        S, G, A = [], [], []
        for t in self.trajectories:
            S.extend(t.states[:-1])
            G.extend([t.goal] * len(t))
            A.extend(t.actions)
        dtype = np.int64 if env.discrete else np.float64
        ann = np.concatenate(self.annotations) if self.annotations else np.zeros(0)
        return (np.asarray(S, dtype=dtype), np.asarray(G, dtype=dtype),
                np.asarray(A, dtype=np.int64), ann)


def annotate(trajs, v_sparse: Approximator, env: GoalMdp, gamma: float, lam: float = 0.95) -> list:
    """Per-step GAE on the 0/1 reward against ``v_sparse``; final step bootstraps 0."""
    out = []
    if not trajs:
        return out
    S, NS, G, R, END = [], [], [], [], []
    for t in trajs:
        n = len(t)
        S.extend(t.states[:-1])
        NS.extend(t.states[1:])
        G.extend([t.goal] * n)
        R.extend(t.env_rewards)
        END.extend([0] * (n - 1) + [1])
    dtype = np.int64 if env.discrete else np.float64
    S, NS, G = (np.asarray(a, dtype=dtype) for a in (S, NS, G))
    v = v_sparse(v_sparse.prepare(env, S, G))
    vn = v_sparse(v_sparse.prepare(env, NS, G))
    end = np.asarray(END, dtype=np.uint8)
    adv = kernels.gae(np.asarray(R, dtype=np.float64), v, vn, end, end, gamma, lam)
    offset = 0
    for t in trajs:
        out.append(adv[offset:offset + len(t)].copy())
        offset += len(t)
    return out


def build_dataset(rollout_successes, augmented, v_sparse: Approximator, env: GoalMdp,
                  gamma: float = 0.99, lam: float = 0.95) -> SuccessDataset:
    """Fresh dataset from this phase's successes and augmented demonstrations."""
    trajs = list(rollout_successes) + list(augmented)
    for t in trajs:
        if not t.success:
            raise ContractViolationError("build_dataset received an unsuccessful trajectory")
        if len(t) == 0:
            raise ContractViolationError("build_dataset received an empty trajectory")
    return SuccessDataset(trajs, annotate(trajs, v_sparse, env, gamma, lam))


def bc_weight(annotation, beta: float = 1.0, clip: float | None = 20.0):
    """``exp(annotation / beta)``, optionally clipped from above."""
    if not beta > 0:
        raise InvalidParameterError(f"beta must be positive, got {beta}")
    w = np.exp(np.asarray(annotation, dtype=np.float64) / beta)
    if clip is not None:
        w = np.minimum(w, clip)
    return w if w.ndim else float(w)


def sl_update(policy: Approximator, dataset: SuccessDataset, cfg: PhaseConfig, rng: np.random.Generator,
              env: GoalMdp, mode: str = WEIGHTED_BC, opt: Adam | None = None) -> dict:
    """``m_epoch`` passes of weighted NLL over shuffled steps in minibatches of ``m``.

    Only the policy is touched. An empty dataset is a no-op.
    """
    if mode not in (WEIGHTED_BC, GCSL_PLAIN):
        raise InvalidParameterError(f"unknown SL mode {mode!r}")
    if dataset.n_steps == 0:
        return {"n_updates": 0, "warning": "empty dataset"}
    opt = opt or Adam.for_approximator(policy, lr=cfg.lr)
    S, G, A, ann = dataset.flat(env)
    if mode == GCSL_PLAIN:
        w = np.ones(len(A))
    else:
        w = bc_weight(ann, cfg.beta, cfg.weight_clip)
    x = policy.prepare(env, S, G)
    n = len(A)

    def take(idx):
        return x[idx] if policy.mode == "mlp" else (x[0][idx], x[1][idx])

    full = {"inputs": x, "actions": A, "weights": w}
    nll_before = loss_value(policy, "weighted_nll", {**full, "weights": np.ones(n)})
    n_updates = 0
    for _ in range(cfg.m_epoch):
        perm = rng.permutation(n)
        for k in range(0, n, cfg.m):
            idx = perm[k:k + cfg.m]
            _, g = gradient(policy, "weighted_nll", {"inputs": take(idx), "actions": A[idx], "weights": w[idx]})
            opt.step(policy.params, clip_grad_norm(g, cfg.max_grad_norm))
            n_updates += 1
    nll_after = loss_value(policy, "weighted_nll", {**full, "weights": np.ones(n)})
    return {"n_updates": n_updates, "mean_weight": float(w.mean()), "nll_before": nll_before,
            "nll_after": nll_after, "n_steps": n}


def export_dataset(dataset: SuccessDataset, path) -> None:
    lines = []
    for t, ann in zip(dataset.trajectories, dataset.annotations):
        rec = t.to_record()
        rec["annotations"] = [float(a) for a in ann]
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def import_dataset(path, continuous: bool = False) -> SuccessDataset:
    ds = SuccessDataset()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ds.trajectories.append(Trajectory.from_record(rec, continuous))
            ds.annotations.append(np.asarray(rec.get("annotations", []), dtype=np.float64))
    return ds


def write_trajectories_jsonl(trajs, path) -> None:
    atomic_write_text(path, "".join(json.dumps(t.to_record(), sort_keys=True) + "\n" for t in trajs))


class SuccessSet:
    """Bounded FIFO of annotated demonstrations (joint SIL/SIR modes), capped in steps."""

    def __init__(self, capacity_steps: int = 10_000):
        self.capacity = int(capacity_steps)
        self.trajectories: list = []
        self.annotations: list = []
        self._steps = 0
        self._flat = None

    def add(self, trajs, annotations) -> None:
        for t, a in zip(trajs, annotations):
            self.trajectories.append(t)
            self.annotations.append(a)
            self._steps += len(t)
        while self._steps > self.capacity and len(self.trajectories) > 1:
            old = self.trajectories.pop(0)
            self.annotations.pop(0)
            self._steps -= len(old)
        self._flat = None

    @property
    def n_steps(self) -> int:
        return self._steps

    def __len__(self) -> int:
        return len(self.trajectories)

    def sampler(self, policy: Approximator, env: GoalMdp, cfg: PhaseConfig, rng: np.random.Generator):
        """Callable returning a weighted-NLL minibatch of ``cfg.m`` steps, or None."""
        if self._steps == 0:
            return lambda: None
        if self._flat is None:
            ds = SuccessDataset(self.trajectories, self.annotations)
            S, G, A, ann = ds.flat(env)
            self._flat = (policy.prepare(env, S, G), A, bc_weight(ann, cfg.beta, cfg.weight_clip))
        x, A, w = self._flat
        n = len(A)
        size = min(cfg.m, n)

        def sample():
            idx = rng.integers(0, n, size=size)
            inputs = x[idx] if policy.mode == "mlp" else (x[0][idx], x[1][idx])
            return {"inputs": inputs, "actions": A[idx], "weights": w[idx]}

        return sample
