"""Turning failed rollouts into successful demonstrations.

Two tools:

* goal relabeling - pretend the goal was a state the trajectory actually
  reached; free, never touches the environment.
* task reduction  - pick an intermediate goal ``s_B`` maximising
  ``V(s0, s_B) (+) V(s_B, g)`` under the sparse value, then run the policy
  ``s0 -> s_B -> g``; costs environment steps and may fail.
"""
from __future__ import annotations

import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .approximator import Approximator
from .config import COMPOSE_OPS, SEARCH_STRATEGIES
from .envs import REDUCED, RELABELED, ROLLOUT, GoalMdp, Trajectory
from .errors import DegenerateRelabelError, InvalidSpecError, UnsupportedEnvError


class FailureBuffer:
    """Bounded FIFO of failed rollout trajectories."""

    def __init__(self, capacity: int = 4096):
        self.capacity = int(capacity)
        self._items: deque = deque(maxlen=self.capacity)

    def add(self, traj: Trajectory) -> None:
        if traj.success or traj.provenance != ROLLOUT or traj.truncated:
            raise ValueError("failure buffer only accepts complete failed rollouts")
        self._items.append(traj)

    def extend(self, trajs) -> None:
        for t in trajs:
            self.add(t)

    def clear(self) -> None:
        self._items.clear()

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def newest_first(self) -> list:
        return list(reversed(self._items))


@dataclass
class SubgoalSearchSpec:
    strategy: str = "exhaustive"
    n_candidates: int = 64
    compose: str = "multiply"
    threshold: float = 0.1
    cem_rounds: int = 3
    elite_frac: float = 0.2

    def __post_init__(self):
        if self.strategy not in SEARCH_STRATEGIES:
            raise InvalidSpecError(f"unknown search strategy {self.strategy!r}")
        if self.compose not in COMPOSE_OPS:
            raise InvalidSpecError(f"unknown composition operator {self.compose!r}")
        if self.n_candidates < 1:
            raise InvalidSpecError("candidate count must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidSpecError("threshold must lie in [0, 1]")


def compose(a, b, op: str = "multiply"):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if op == "multiply":
        return a * b
    if op == "min":
        return np.minimum(a, b)
    if op == "average":
        return 0.5 * (a + b)
    raise InvalidSpecError(f"unknown composition operator {op!r}")


@dataclass
class SearchResult:
    """Best subgoal plus the full composed-score map over candidates."""

    subgoal: object
    score: float
    index: int
    candidates: np.ndarray
    v_first: np.ndarray
    v_second: np.ndarray
    scores: np.ndarray

    def __iter__(self):
        return iter((self.subgoal, self.score))


def candidate_goals(env: GoalMdp, spec: SubgoalSearchSpec) -> np.ndarray:
    """Subgoal candidates: every goal (discrete exhaustive), an evenly spaced
    subset (discrete grid) or a square grid over the table (continuous)."""
    if env.discrete:
        all_goals = np.arange(env.n_goals, dtype=np.int64)
        if spec.strategy == "exhaustive" or spec.n_candidates >= env.n_goals:
            return all_goals
        idx = np.unique(np.linspace(0, env.n_goals - 1, spec.n_candidates).round().astype(np.int64))
        return all_goals[idx]
    side = max(1, int(round(math.sqrt(spec.n_candidates))))
    return env.goal_grid(side)


def _score(v_fn, env, s0, g, cands, op):
    n = len(cands)
    if env.discrete:
        s_rep = np.full(n, s0, dtype=np.int64)
        g_rep = np.full(n, g, dtype=np.int64)
        first_states = s_rep
        second_states = cands  # goal space == state space
    else:
        s_rep = np.repeat(np.asarray(s0, dtype=np.float64)[None, :], n, axis=0)
        g_rep = np.repeat(np.asarray(g, dtype=np.float64)[None, :], n, axis=0)
        first_states = s_rep
        # the second leg starts where the first leg leaves the puck: hand at
        # its start position, puck at the candidate
        second_states = np.concatenate([s_rep[:, :2], cands], axis=1)
    v1 = np.asarray(v_fn(first_states, cands), dtype=np.float64)
    v2 = np.asarray(v_fn(second_states, g_rep), dtype=np.float64)
    return v1, v2, compose(v1, v2, op)


def value_fn(v: Approximator, env: GoalMdp):
    """Adapter turning an approximator into ``f(states, goals) -> values``."""
    return lambda states, goals: v(v.prepare(env, states, goals))


def search_subgoal(v_sparse, env: GoalMdp, s0, g, spec: SubgoalSearchSpec | None = None,
                   rng: np.random.Generator | None = None) -> SearchResult:
    """argmax over candidates of ``V(s0, s_B) (+) V(s_B, g)``; ties go to the lowest index.

    ``v_sparse`` is an Approximator or any callable ``f(states, goals)``.
    """
    spec = spec or SubgoalSearchSpec()
    v_fn = value_fn(v_sparse, env) if isinstance(v_sparse, Approximator) else v_sparse
    cands = candidate_goals(env, spec)
    if len(cands) == 0:
        raise InvalidSpecError("empty candidate set")
    v1, v2, scores = _score(v_fn, env, s0, g, cands, spec.compose)
    if spec.strategy == "cross-entropy-refine" and not env.discrete:
        rng = rng or np.random.default_rng(0)
        pool_c, pool_1, pool_2, pool_s = [cands], [v1], [v2], [scores]
        elites = cands[np.argsort(-scores, kind="stable")[:max(1, int(spec.elite_frac * len(cands)))]]
        for _ in range(spec.cem_rounds):
            mu = elites.mean(axis=0)
            sd = elites.std(axis=0) + 1e-3
            new = np.clip(rng.normal(mu, sd, size=(spec.n_candidates, cands.shape[1])), 0.0, env.extent)
            n1, n2, ns = _score(v_fn, env, s0, g, new, spec.compose)
            pool_c.append(new)
            pool_1.append(n1)
            pool_2.append(n2)
            pool_s.append(ns)
            elites = new[np.argsort(-ns, kind="stable")[:max(1, int(spec.elite_frac * len(new)))]]
        cands = np.concatenate(pool_c)
        v1, v2, scores = np.concatenate(pool_1), np.concatenate(pool_2), np.concatenate(pool_s)
    best = int(np.argmax(scores))
    sub = int(cands[best]) if env.discrete else cands[best].copy()
    return SearchResult(sub, float(scores[best]), best, cands, v1, v2, scores)


def score_map_csv(result: SearchResult, env: GoalMdp) -> str:
    """CSV grid of the composed score, one row per candidate, argmax flagged."""
    buf = io.StringIO()
    if env.discrete and hasattr(env, "cell"):
        head = "index,row,col"
        coords = [f"{env.cell(c)[0]},{env.cell(c)[1]}" for c in result.candidates]
    elif env.discrete:
        head = "index,state"
        coords = [str(int(c)) for c in result.candidates]
    else:
        head = "index,x,y"
        coords = [f"{c[0]:.6f},{c[1]:.6f}" for c in result.candidates]
    buf.write(f"{head},v_first,v_second,score,argmax\n")
    for i, crd in enumerate(coords):
        flag = 1 if i == result.index else 0
        buf.write(f"{i},{crd},{result.v_first[i]:.6f},{result.v_second[i]:.6f},{result.scores[i]:.6f},{flag}\n")
    return buf.getvalue()


def _first_hit(env: GoalMdp, states, goal, upto: int) -> int | None:
    for i in range(1, upto + 1):
        if env.reward(states[i], goal):
            return i
    return None


def relabel(traj: Trajectory, env: GoalMdp, j: int | None = None) -> Trajectory:
    """Successful copy of ``traj`` whose goal is the state reached at step ``j``.

    Defaults to the final step. The copy is cut at the first step that
    satisfies the new goal, so it never contains a reward before its end.
    """
    n = len(traj)
    if n == 0:
        raise DegenerateRelabelError("cannot relabel an empty trajectory")
    j = n if j is None else int(j)
    if j == 0:
        raise DegenerateRelabelError("relabel index 0 gives an empty demonstration")
    if not 1 <= j <= n:
        raise IndexError(f"relabel index {j} outside [1, {n}]")
    goal = env.achieved_goal(traj.states[j])
    if isinstance(goal, np.ndarray):
        goal = goal.copy()
    cut = _first_hit(env, traj.states, goal, j)
    states = list(traj.states[:cut + 1])
    actions = list(traj.actions[:cut])
    rewards = [0] * (cut - 1) + [1]
    return Trajectory(goal, states, actions, rewards, True, RELABELED)


def _run_leg(env, policy, start, goal, budget, rng, greedy):
    """Roll out ``policy`` towards ``goal``; returns (states, actions, reached)."""
    states = [start]
    actions = []
    if env.reward(start, goal):
        return states, actions, True
    if budget <= 0:
        return states, actions, False
    env.reset(task=(start, goal))
    for _ in range(budget):
        x = policy.prepare(env, _batch1(env, states[-1]), _batch1(env, goal))
        a = int(policy.greedy(x)[0]) if greedy else int(policy.sample(x, rng)[0][0])
        ns, r, done = env.step(a)
        states.append(ns)
        actions.append(a)
        if r:
            return states, actions, True
        if done:
            break
    return states, actions, False


def _batch1(env, x):
    if env.discrete:
        return np.asarray([x], dtype=np.int64)
    return np.asarray(x, dtype=np.float64)[None, :]


def execute_reduction(env: GoalMdp, policy: Approximator, start_state, s_B, g,
                      horizon_split=None, rng=None, greedy=False, max_steps=None):
    """Run ``policy`` from ``start_state`` to ``s_B``, then on to ``g``.

    Returns ``(trajectory or None, steps_used)``. Each leg gets its share of
    ``horizon_split`` (default: one env horizon each); ``max_steps`` caps
    the total. The trajectory, when returned, has goal ``g`` and
    ``info["join"]`` holds the index of the junction state, or None when the
    first leg already passed through ``g`` and the demonstration was cut
    before reaching ``s_B``.
    """
    if not getattr(env, "supports_injection", False):
        raise UnsupportedEnvError(f"{type(env).__name__} cannot be reset to an arbitrary state")
    rng = rng or np.random.default_rng(0)
    h1, h2 = horizon_split or (env.horizon, env.horizon)
    cap = math.inf if max_steps is None else int(max_steps)
    b1 = int(min(h1, cap))
    st1, ac1, ok1 = _run_leg(env, policy, start_state, s_B, b1, rng, greedy)
    used = len(ac1)
    if not ok1:
        return None, used
    b2 = int(min(h2, cap - used))
    st2, ac2, ok2 = _run_leg(env, policy, st1[-1], g, b2, rng, greedy)
    used += len(ac2)
    if not ok2:
        return None, used
    states = st1 + st2[1:]
    actions = ac1 + ac2
    if not actions:
        return None, used
    cut = _first_hit(env, states, g, len(actions))
    states = states[:cut + 1]
    actions = actions[:cut]
    traj = Trajectory(g, states, actions, [0] * (cut - 1) + [1], True, REDUCED,
                      info={"join": len(ac1) if len(ac1) <= cut else None, "subgoal": s_B})
    return traj, used


@dataclass
class AugmentStats:
    relabeled: int = 0
    reduced: int = 0
    attempts: int = 0
    skipped_low_score: int = 0
    failed_executions: int = 0
    steps_used: int = 0
    scores: list = field(default_factory=list)


def augment_failures(buffer, env: GoalMdp, policy: Approximator, v_sparse, spec: SubgoalSearchSpec,
                     budget: int, rng: np.random.Generator | None = None, *, reduction: bool = True,
                     reduction_fraction: float = 0.25, relabel_mode: str = "final",
                     greedy: bool = False):
    """Relabel every failure and attempt reduction on the newest ones.

    Reduction is tried on at most ``ceil(reduction_fraction * len(buffer))``
    failures (newest first), only when the composed score clears
    ``spec.threshold`` and environment budget remains. Returns
    ``(demonstrations, AugmentStats)``.
    """
    rng = rng or np.random.default_rng(0)
    failures = buffer.newest_first() if isinstance(buffer, FailureBuffer) else list(reversed(list(buffer)))
    stats = AugmentStats()
    demos = []
    n_reduce = math.ceil(reduction_fraction * len(failures)) if reduction else 0
    remaining = int(budget)
    for i, traj in enumerate(failures):
        if i < n_reduce and remaining > 0:
            res = search_subgoal(v_sparse, env, traj.states[0], traj.goal, spec, rng)
            stats.scores.append(res.score)
            if res.score >= spec.threshold:
                stats.attempts += 1
                demo, used = execute_reduction(env, policy, traj.states[0], res.subgoal, traj.goal,
                                               rng=rng, greedy=greedy, max_steps=remaining)
                remaining -= used
                stats.steps_used += used
                if demo is not None:
                    demos.append(demo)
                    stats.reduced += 1
                else:
                    stats.failed_executions += 1
            else:
                stats.skipped_low_score += 1
        j = None if relabel_mode == "final" else int(rng.integers(1, len(traj) + 1))
        demos.append(relabel(traj, env, j))
        stats.relabeled += 1
    return demos, stats
