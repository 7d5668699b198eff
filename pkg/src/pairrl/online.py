"""Online RL phase: rollout collection, value-difference shaping, GAE, PPO.

Two value networks are kept. ``v_sparse`` regresses discounted 0/1 returns
only and is the one used for intrinsic rewards, subgoal search and BC
weights. ``v_aux`` fits the shaped return and provides PPO advantages.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .approximator import (
    CATEGORICAL,
    VALUE,
    Adam,
    Approximator,
    clip_grad_norm,
    gradient,
    log_softmax,
)
from .config import PhaseConfig
from .envs import ROLLOUT, GoalMdp, Trajectory
from .errors import InvalidParameterError, NumericalFailureError, PairError, WorkerError


@dataclass
class ValueHeads:
    sparse: Approximator
    aux: Approximator


@dataclass
class Agent:
    """Policy, the two value heads and their optimizers."""

    policy: Approximator
    values: ValueHeads
    pi_opt: Adam
    sparse_opt: Adam
    aux_opt: Adam
    sl_opt: Adam | None = None  # offline phase keeps its own moments

    @classmethod
    def create(cls, env: GoalMdp, cfg: PhaseConfig, seed: int = 0) -> "Agent":
        if cfg.approximator == "tabular":
            common = dict(n_states=env.n_states, n_goals=env.n_goals)
            policy = Approximator("tabular", CATEGORICAL, n_actions=env.n_actions, **common)
            sparse = Approximator("tabular", VALUE, **common)
            aux = Approximator("tabular", VALUE, **common)
        else:
            common = dict(input_dim=env.input_dim, hidden=cfg.hidden)
            policy = Approximator("mlp", CATEGORICAL, n_actions=env.n_actions, seed=seed, **common)
            sparse = Approximator("mlp", VALUE, squash=True, seed=seed + 1, out_scale=0.01, **common)
            aux = Approximator("mlp", VALUE, seed=seed + 2, out_scale=0.01, **common)
        return cls(policy, ValueHeads(sparse, aux),
                   Adam.for_approximator(policy, lr=cfg.lr),
                   Adam.for_approximator(sparse, lr=cfg.lr),
                   Adam.for_approximator(aux, lr=cfg.lr),
                   Adam.for_approximator(policy, lr=cfg.lr))

    def nets(self) -> dict:
        return {"policy": self.policy, "v_sparse": self.values.sparse, "v_aux": self.values.aux}

    def optimizers(self) -> dict:
        return {"policy": self.pi_opt, "v_sparse": self.sparse_opt, "v_aux": self.aux_opt,
                "policy_sl": self.sl_opt}


@dataclass
class RolloutBatch:
    """Flat per-step arrays (episodes contiguous) plus the episode list.

    ``terminal[t]`` means no bootstrap after step t (success or horizon);
    ``episode_end[t]`` marks the last stored step of every episode,
    including truncated ones.
    """

    trajectories: list
    states: np.ndarray
    goals: np.ndarray
    next_states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    env_rewards: np.ndarray
    terminal: np.ndarray
    episode_end: np.ndarray
    sparse_mask: np.ndarray
    v_sparse: np.ndarray | None = None
    v_sparse_next: np.ndarray | None = None
    v_aux: np.ndarray | None = None
    v_aux_next: np.ndarray | None = None
    intrinsic: np.ndarray | None = None
    shaped_rewards: np.ndarray | None = None
    advantages: np.ndarray | None = None
    returns_aux: np.ndarray | None = None
    returns_sparse: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def successes(self) -> list:
        return [t for t in self.trajectories if t.success]

    @property
    def failures(self) -> list:
        return [t for t in self.trajectories if not t.success and not t.truncated]

    @property
    def truncated(self) -> list:
        return [t for t in self.trajectories if t.truncated]


def _stack(env, items):
    if env.discrete:
        return np.asarray(items, dtype=np.int64)
    return np.asarray(items, dtype=np.float64)


def collect_rollouts(agent: Agent, envs: list, cfg: PhaseConfig, rng: np.random.Generator,
                     task_sampler=None) -> RolloutBatch:
    """Run every worker env for ``cfg.n_steps`` steps in lockstep.

    Episodes restart when done; the episode in flight at the end is kept as
    truncated. ``task_sampler(env)`` overrides the env's own start/goal
    distribution (curriculum).
    """
    policy = agent.policy
    n_w = len(envs)
    ref = envs[0]

    def start(w):
        env = envs[w]
        try:
            if task_sampler is None:
                return env.reset()
            return env.reset(task=task_sampler(env))
        except PairError as exc:
            raise WorkerError(w, exc) from exc

    cur = []
    for w in range(n_w):
        s, g = start(w)
        cur.append({"goal": g, "states": [s], "actions": [], "logp": [], "rewards": []})
    episodes = []  # (trajectory, logp list)
    for _ in range(cfg.n_steps):
        states = [c["states"][-1] for c in cur]
        goals = [c["goal"] for c in cur]
        inputs = policy.prepare(ref, _stack(ref, states), _stack(ref, goals))
        actions, logp = policy.sample(inputs, rng)
        for w in range(n_w):
            c = cur[w]
            try:
                ns, r, done = envs[w].step(int(actions[w]))
            except PairError as exc:
                raise WorkerError(w, exc) from exc
            c["states"].append(ns)
            c["actions"].append(int(actions[w]))
            c["logp"].append(float(logp[w]))
            c["rewards"].append(int(r))
            if done:
                traj = Trajectory(c["goal"], c["states"], c["actions"], c["rewards"], bool(r), ROLLOUT)
                episodes.append((traj, c["logp"]))
                s, g = start(w)
                cur[w] = {"goal": g, "states": [s], "actions": [], "logp": [], "rewards": []}
    for c in cur:
        if c["actions"]:
            traj = Trajectory(c["goal"], c["states"], c["actions"], c["rewards"], False, ROLLOUT,
                              truncated=True)
            episodes.append((traj, c["logp"]))
    return _flatten(ref, episodes, cfg.gamma)


def _flatten(env, episodes, gamma) -> RolloutBatch:
    S, G, NS, A, LP, R, TERM, END, MASK = ([] for _ in range(9))
    trajs = []
    for traj, logp in episodes:
        n = len(traj)
        trajs.append(traj)
        S.extend(traj.states[:-1])
        NS.extend(traj.states[1:])
        G.extend([traj.goal] * n)
        A.extend(traj.actions)
        LP.extend(logp)
        R.extend(traj.env_rewards)
        term = [0] * n
        if not traj.truncated:
            term[-1] = 1
        TERM.extend(term)
        END.extend([0] * (n - 1) + [1])
        MASK.extend([0.0 if traj.truncated else 1.0] * n)
    return RolloutBatch(
        trajectories=trajs,
        states=_stack(env, S), goals=_stack(env, G), next_states=_stack(env, NS),
        actions=np.asarray(A, dtype=np.int64), logp=np.asarray(LP, dtype=np.float64),
        env_rewards=np.asarray(R, dtype=np.float64),
        terminal=np.asarray(TERM, dtype=np.uint8), episode_end=np.asarray(END, dtype=np.uint8),
        sparse_mask=np.asarray(MASK, dtype=np.float64),
    )


def intrinsic_reward(v_sparse: Approximator, env: GoalMdp, s, s_next, g) -> np.ndarray:
    """Value-difference bonus ``V(s', g) - V(s, g)`` for a batch of transitions."""
    v0 = v_sparse(v_sparse.prepare(env, s, g))
    v1 = v_sparse(v_sparse.prepare(env, s_next, g))
    return v1 - v0


def annotate_values(batch: RolloutBatch, values: ValueHeads, env: GoalMdp, alpha: float,
                    use_intrinsic: bool = True) -> RolloutBatch:
    """Fill value estimates, intrinsic rewards and shaped rewards."""
    sp, ax = values.sparse, values.aux
    x = sp.prepare(env, batch.states, batch.goals)
    xn = sp.prepare(env, batch.next_states, batch.goals)
    batch.v_sparse = sp(x)
    batch.v_sparse_next = sp(xn)
    batch.v_aux = ax(x)
    batch.v_aux_next = ax(xn)
    batch.intrinsic = batch.v_sparse_next - batch.v_sparse
    bonus = alpha * batch.intrinsic if use_intrinsic else 0.0
    batch.shaped_rewards = batch.env_rewards + bonus
    offset = 0
    for traj in batch.trajectories:
        n = len(traj)
        traj.shaped_rewards = list(batch.shaped_rewards[offset:offset + n])
        offset += n
    return batch


def sparse_returns(env_rewards, terminal, episode_end, mask, gamma) -> np.ndarray:
    """Discounted 0/1 returns per step, zero where masked out (truncated episodes)."""
    n = len(env_rewards)
    out = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if episode_end[t]:
            running = 0.0
        running = env_rewards[t] + gamma * running
        out[t] = running
    return out * mask


def compute_gae(batch: RolloutBatch, values: ValueHeads | None, gamma: float, lam: float,
                env: GoalMdp | None = None, alpha: float = 0.5) -> RolloutBatch:
    """GAE on shaped rewards against ``v_aux``, plus sparse return targets.

    If the batch has not been annotated yet, ``values`` and ``env`` are used
    to do so first.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidParameterError(f"gamma must lie in (0, 1], got {gamma}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError(f"lambda must lie in [0, 1], got {lam}")
    if batch.shaped_rewards is None:
        annotate_values(batch, values, env, alpha)
    batch.advantages = kernels.gae(batch.shaped_rewards, batch.v_aux, batch.v_aux_next,
                                   batch.terminal, batch.episode_end, gamma, lam)
    batch.returns_aux = batch.advantages + batch.v_aux
    batch.returns_sparse = sparse_returns(batch.env_rewards, batch.terminal, batch.episode_end,
                                          batch.sparse_mask, gamma)
    return batch


def clipped_surrogate(ratio, adv, eps):
    """Per-sample PPO objective ``min(r A, clip(r, 1-eps, 1+eps) A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def normalize(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean() if len(adv) else adv
    std = adv.std()
    return (adv - adv.mean()) / (std if std > 1e-8 else 1.0)


def ppo_update(agent: Agent, batch: RolloutBatch, cfg: PhaseConfig, rng: np.random.Generator,
               env: GoalMdp, sl_sampler=None) -> dict:
    """``n_epoch`` passes over ``n_batch`` minibatches of the batch.

    ``sl_sampler()`` (joint modes) returns a weighted-NLL minibatch dict or
    None; its gradient is added to the policy gradient scaled by ``c_sl``.
    """
    n = len(batch)
    if n == 0:
        return {"n_updates": 0}
    policy, sp, ax = agent.policy, agent.values.sparse, agent.values.aux
    x = policy.prepare(env, batch.states, batch.goals)
    adv = normalize(batch.advantages) if cfg.normalize_advantages else batch.advantages
    pol_losses, aux_losses, sp_losses, sl_losses = [], [], [], []
    n_updates = 0

    def take(idx):
        return x[idx] if policy.mode == "mlp" else (x[0][idx], x[1][idx])

    for _ in range(cfg.n_epoch):
        perm = rng.permutation(n)
        for idx in np.array_split(perm, min(cfg.n_batch, n)):
            inputs = take(idx)
            mb = {"inputs": inputs, "actions": batch.actions[idx], "advantages": adv[idx],
                  "logp_old": batch.logp[idx], "clip_eps": cfg.clip_eps}
            try:
                loss, g = gradient(policy, [("clipped_surrogate", 1.0), ("entropy", cfg.ent_coef)], mb)
                if sl_sampler is not None:
                    sl_mb = sl_sampler()
                    if sl_mb is not None:
                        sl_loss, g_sl = gradient(policy, "weighted_nll", sl_mb)
                        g = g + cfg.c_sl * g_sl
                        sl_losses.append(sl_loss)
                aux_loss, g_aux = gradient(ax, "squared_error", {"inputs": inputs, "targets": batch.returns_aux[idx]})
                sp_loss, g_sp = gradient(sp, "squared_error", {"inputs": inputs, "targets": batch.returns_sparse[idx],
                                                               "mask": batch.sparse_mask[idx]})
            except NumericalFailureError as exc:
                exc.diagnostics.update({"phase": "ppo", "update": n_updates,
                                        "max_abs_adv": float(np.abs(adv).max())})
                raise
            agent.pi_opt.step(policy.params, clip_grad_norm(g, cfg.max_grad_norm))
            agent.aux_opt.step(ax.params, clip_grad_norm(g_aux, cfg.max_grad_norm))
            agent.sparse_opt.step(sp.params, clip_grad_norm(g_sp, cfg.max_grad_norm))
            pol_losses.append(loss)
            aux_losses.append(aux_loss)
            sp_losses.append(sp_loss)
            n_updates += 1
    logp_new = log_softmax(policy(x))[np.arange(n), batch.actions]
    ratio = np.exp(logp_new - batch.logp)
    stats = {
        "n_updates": n_updates,
        "policy_loss": float(np.mean(pol_losses)),
        "aux_value_loss": float(np.mean(aux_losses)),
        "sparse_value_loss": float(np.mean(sp_losses)),
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > cfg.clip_eps).mean()),
    }
    if sl_losses:
        stats["sl_loss"] = float(np.mean(sl_losses))
    return stats
