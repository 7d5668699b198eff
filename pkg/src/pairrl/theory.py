"""Brute-force checks of the iteration-count separation on discrete MDPs.

The idealized pipeline follows the analysis setting exactly: every
state-goal pair is attempted once per iteration with the previous policy,
the policy is a table, and "SL" writes successful demonstrations into the
table. Task reduction scores candidates with the exact success indicator
of the previous policy, so a subgoal with score 1 is solvable on both legs.

Reachability semantics: a deterministic table policy reaches ``g`` from
``s`` iff following it visits ``g``. Such a walk either hits ``g`` within
``n_states`` steps or cycles forever, so ``n_states`` is an exact budget.
A table entry without a unique best action counts as unresolved and the
walk fails there.
"""
from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .approximator import CATEGORICAL, Approximator
from .envs import ChainMdp, DiscreteGoalMdp, require_discrete
from .errors import ContractViolationError, InvalidParameterError

WITH_REDUCTION = "with-reduction"
WITHOUT_REDUCTION = "without-reduction"
UNSET = np.iinfo(np.int64).max


@dataclass
class ReachabilityTable:
    """Shortest-path lengths ``d(s, s')``; -1 marks unreachable pairs."""

    dist: np.ndarray

    @classmethod
    def of(cls, env) -> "ReachabilityTable":
        env = require_discrete(env)
        return cls(kernels.bfs_all_pairs(env.next_table))

    def __call__(self, s: int, g: int) -> int | None:
        d = int(self.dist[s, g])
        return None if d < 0 else d

    @property
    def diameter(self) -> int:
        return int(self.dist.max())

    @property
    def finite(self) -> np.ndarray:
        return self.dist >= 0

    def midpoint_ok(self) -> bool:
        """Every reachable pair at distance d has a state within ceil(d/2) of both ends."""
        d = np.where(self.finite, self.dist, 10 ** 9).astype(np.int64)
        n = len(d)
        for s in range(n):
            via = np.maximum(d[s][:, None], d)  # via[m, g] = max(d(s,m), d(m,g))
            best = via.min(axis=0)
            need = -(-d[s] // 2)
            mask = self.finite[s]
            if (best[mask] > need[mask]).any():
                return False
        return True


def bfs_reachable(env, s: int, g: int) -> int | None:
    """Exact shortest-path length from ``s`` to ``g``, or None if unreachable."""
    return ReachabilityTable.of(env)(s, g)


def greedy_action_table(policy, env: DiscreteGoalMdp) -> np.ndarray:
    """Deterministic action per (state, goal); -1 where the best action is tied."""
    if isinstance(policy, np.ndarray):
        return np.ascontiguousarray(policy, dtype=np.int64)
    if not (isinstance(policy, Approximator) and policy.head == CATEGORICAL):
        raise TypeError("policy must be a categorical Approximator or an action table")
    S = env.n_states
    ss, gg = np.meshgrid(np.arange(S), np.arange(env.n_goals), indexing="ij")
    logits = policy(policy.prepare(env, ss.ravel(), gg.ravel()))
    best = logits.argmax(axis=1)
    top = logits.max(axis=1, keepdims=True)
    tied = (logits == top).sum(axis=1) > 1
    return np.where(tied, -1, best).reshape(S, env.n_goals).astype(np.int64)


def reach_matrix(policy, env: DiscreteGoalMdp, max_steps: int | None = None) -> np.ndarray:
    """Bool matrix: greedy policy reaches goal g from state s."""
    env = require_discrete(env)
    table = greedy_action_table(policy, env)
    steps = kernels.greedy_reach(table, env.next_table, env.goal_of_state,
                                 max_steps if max_steps is not None else env.n_states)
    return steps >= 0


def horizon_from_reach(reach: np.ndarray, table: ReachabilityTable) -> int:
    """Largest l such that every pair with d <= l is reached (capped at the diameter)."""
    failing = table.finite & ~reach
    if not failing.any():
        return table.diameter
    return int(table.dist[failing].min()) - 1


def measure_horizon(policy, env, table: ReachabilityTable | None = None, max_steps: int | None = None) -> int:
    """Reachable horizon of a greedy policy, by enumerating all state-goal pairs."""
    env = require_discrete(env)
    table = table or ReachabilityTable.of(env)
    return horizon_from_reach(reach_matrix(policy, env, max_steps), table)


def success_probability(env: DiscreteGoalMdp, probs: np.ndarray, s: int, g: int, horizon: int) -> float:
    """Exact probability that the stochastic table policy ``probs[s, g, a]``
    reaches ``g`` from ``s`` within ``horizon`` steps (forward DP)."""
    mass = np.zeros(env.n_states)
    mass[s] = 1.0
    hit = 0.0
    for _ in range(horizon + 1):
        hit += mass[g]
        mass[g] = 0.0
        if not mass.any():
            break
        nxt = np.zeros_like(mass)
        for a in range(env.n_actions):
            np.add.at(nxt, env.next_table[:, a], mass * probs[:, g, a])
        mass = nxt
    return float(hit)


@dataclass
class HardInstance:
    env: ChainMdp
    policy: Approximator  # uniform initial policy (all-zero logits)

    @property
    def diameter(self) -> int:
        return self.env.D

    def random_success_probability(self, s: int = 0, g: int | None = None) -> float:
        g = self.env.D if g is None else g
        probs = np.full((self.env.n_states, self.env.n_goals, 2), 0.5)
        return success_probability(self.env, probs, s, g, self.env.horizon)


def make_hard_instance(D: int) -> HardInstance:
    """The (D+2)-state chain with the uniform initial policy."""
    if int(D) < 2:
        raise InvalidParameterError(f"hard instance needs D >= 2, got {D}")
    env = ChainMdp(int(D))
    policy = Approximator("tabular", CATEGORICAL, n_actions=2, n_states=env.n_states, n_goals=env.n_goals)
    return HardInstance(env, policy)


@dataclass
class HorizonRecord:
    D: int
    mode: str
    seed: int
    ells: list = field(default_factory=list)
    samples: int = 0
    committed_consistent: bool = True

    @property
    def iterations(self) -> int:
        return len(self.ells) - 1

    def doubling_holds(self) -> bool:
        return all(b >= min(2 * a, self.D) for a, b in zip(self.ells[:-1], self.ells[1:]))

    def monotone(self) -> bool:
        return all(b >= a for a, b in zip(self.ells[:-1], self.ells[1:]))


class IdealizedPipeline:
    """Table policy + exact-indicator task reduction on a discrete MDP."""

    def __init__(self, env: DiscreteGoalMdp, reduction: bool = True, seed: int = 0):
        self.env = require_discrete(env)
        self.reduction = reduction
        self.rng = np.random.default_rng(seed)
        self.table = ReachabilityTable.of(env)
        S = env.n_states
        self.max_steps = S
        self.actions = np.full((S, env.n_goals), -1, dtype=np.int64)
        self.stored = np.full((S, env.n_goals), UNSET, dtype=np.int64)
        gos = env.goal_of_state
        for s in range(S):
            self.stored[s, gos[s]] = 0
        # one-step goals are solved by the initial policy
        for s in range(S):
            for a in range(env.n_actions):
                nxt = int(env.next_table[s, a])
                g = gos[nxt]
                if nxt != s and self.stored[s, g] > 1:
                    self.stored[s, g] = 1
                    self.actions[s, g] = a
        self.samples = 0
        starts, goals = np.meshgrid(np.arange(S), np.arange(env.n_goals), indexing="ij")
        keep = gos[starts.ravel()] != goals.ravel()
        self.pair_starts = starts.ravel()[keep]
        self.pair_goals = goals.ravel()[keep]

    def reach(self) -> np.ndarray:
        return kernels.greedy_reach(self.actions, self.env.next_table, self.env.goal_of_state,
                                    self.max_steps) >= 0

    def horizon(self) -> int:
        return horizon_from_reach(self.reach(), self.table)

    def committed_horizon(self) -> int:
        """Horizon implied purely by which pairs hold a stored demonstration."""
        return horizon_from_reach(self.stored != UNSET, self.table)

    def _rollout(self, starts, goals):
        uniforms = self.rng.random((len(starts), self.max_steps))
        out = kernels.rollout_tabular(self.actions, self.env.next_table, self.env.goal_of_state,
                                      starts, goals, uniforms, self.max_steps)
        self.samples += int(out[0].sum())
        return out

    def iterate(self) -> int:
        """One collect / augment / commit round; returns the new horizon."""
        env = self.env
        V = self.reach().astype(np.float64)  # exact indicator of the previous policy
        lengths, success, states, actions = self._rollout(self.pair_starts, self.pair_goals)
        demo_states, demo_actions, demo_len, demo_goal = [], [], [], []

        def add(st, ac, ln, gl):
            demo_states.append(st)
            demo_actions.append(ac)
            demo_len.append(ln)
            demo_goal.append(gl)

        ok = success.astype(bool)
        add(states[ok], actions[ok], lengths[ok], self.pair_goals[ok])
        fail = np.flatnonzero(~ok)
        if self.reduction and len(fail):
            fs, fg = self.pair_starts[fail], self.pair_goals[fail]
            scores = V[fs, :] * V[:, env.goal_of_state][:, fg].T
            best = scores.argmax(axis=1)
            go = scores[np.arange(len(fail)), best] >= 1.0
            if go.any():
                rs, rg, rb = fs[go], fg[go], best[go]
                l1, ok1, st1, ac1 = self._rollout(rs, env.goal_of_state[rb])
                l2, ok2, st2, ac2 = self._rollout(st1[np.arange(len(rs)), l1], rg)
                both = (ok1 & ok2).astype(bool)
                if not both.all():
                    raise ContractViolationError("reduction leg failed despite indicator value 1")
                L = l1 + l2
                width = int(L.max()) if len(L) else 0
                cs = np.full((len(rs), width + 1), -1, dtype=np.int64)
                ca = np.full((len(rs), max(width, 1)), -1, dtype=np.int64)
                for i in range(len(rs)):
                    cs[i, :l1[i] + 1] = st1[i, :l1[i] + 1]
                    cs[i, l1[i]:L[i] + 1] = st2[i, :l2[i] + 1]
                    ca[i, :l1[i]] = ac1[i, :l1[i]]
                    ca[i, l1[i]:L[i]] = ac2[i, :l2[i]]
                add(cs, ca, L, rg)
        # hindsight relabel of every failure onto its final state
        if len(fail):
            fst, fac, fln = states[fail], actions[fail], lengths[fail]
            final = fst[np.arange(len(fail)), fln]
            hit = fst == final[:, None]
            hit[:, 0] = False
            cut = hit.argmax(axis=1)
            good = hit[np.arange(len(fail)), cut]
            add(fst[good], fac[good], cut[good], env.goal_of_state[final[good]])
        for st, ac, ln, gl in zip(demo_states, demo_actions, demo_len, demo_goal):
            if len(ln):
                kernels.commit_demos(self.actions, self.stored, st, ac, ln, gl)
        return self.horizon()


def run_doubling_experiment(D: int | None = None, mode: str = WITH_REDUCTION, seeds=(0,), env=None,
                            max_iterations: int | None = None) -> list[HorizonRecord]:
    """Iterate the idealized pipeline until the horizon covers the diameter.

    ``env`` defaults to the chain hard instance of length ``D``. Returns one
    ``HorizonRecord`` per seed with the horizon after every iteration
    (index 0 is the initial policy).
    """
    if mode not in (WITH_REDUCTION, WITHOUT_REDUCTION):
        raise InvalidParameterError(f"unknown mode {mode!r}")
    if env is None:
        if D is None:
            raise InvalidParameterError("give D or env")
        env = ChainMdp(int(D))
    env = require_discrete(env)
    if mode == WITHOUT_REDUCTION and not isinstance(env, ChainMdp):
        warnings.warn("the without-reduction lower bound is only established for the chain hard instance",
                      stacklevel=2)
    table = ReachabilityTable.of(env)
    if not table.midpoint_ok():
        raise ContractViolationError("some reachable pair has no midpoint state; doubling argument does not apply")
    diameter = table.diameter
    cap = max_iterations if max_iterations is not None else 10 * diameter + 10
    records = []
    for seed in seeds:
        pipe = IdealizedPipeline(env, reduction=(mode == WITH_REDUCTION), seed=int(seed))
        rec = HorizonRecord(diameter, mode, int(seed), [pipe.horizon()])
        while rec.ells[-1] < diameter and rec.iterations < cap:
            rec.ells.append(pipe.iterate())
            if pipe.committed_horizon() != rec.ells[-1]:
                rec.committed_consistent = False
        rec.samples = pipe.samples
        records.append(rec)
    return records


def log2_iteration_bound(D: int) -> int:
    return math.ceil(math.log2(D)) if D > 1 else 0


def separation_csv(records) -> str:
    buf = io.StringIO()
    buf.write("D,mode,seed,iterations,samples,ell_sequence\n")
    for r in records:
        buf.write(f"{r.D},{r.mode},{r.seed},{r.iterations},{r.samples},{';'.join(map(str, r.ells))}\n")
    return buf.getvalue()
