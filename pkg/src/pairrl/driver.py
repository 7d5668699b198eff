"""Phase scheduling for PAIR and the four baselines, plus evaluation and curriculum."""
from __future__ import annotations

import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .augmentation import FailureBuffer, SubgoalSearchSpec, augment_failures, relabel
from .config import PhaseConfig
from .envs import RELABELED, GoalMdp, make_env
from .errors import InvalidConfigError, UnsupportedEnvError
from .offline import GCSL_PLAIN, WEIGHTED_BC, SuccessDataset, SuccessSet, annotate, build_dataset, sl_update
from .online import Agent, annotate_values, collect_rollouts, compute_gae, ppo_update

log = logging.getLogger("pairrl")

PAIR = "pair"
BASELINES = ("ppo", "sil", "sir", "gcsl")
MODES = (PAIR,) + BASELINES
SCHEMA_VERSION = 1
ONLINE, OFFLINE = "online", "offline"


# --------------------------------------------------------------------------- evaluation

@dataclass
class EvalStats:
    mean: float
    stderr: float
    n: int


def _binomial(successes: np.ndarray) -> EvalStats:
    n = len(successes)
    p = float(np.mean(successes))
    se = math.sqrt(p * (1 - p) / n) if n > 1 else float("nan")
    return EvalStats(p, se, n)


def evaluate(policy, env: GoalMdp, task_set, n_episodes: int, greedy: bool = True, rng=None) -> EvalStats:
    """Success rate of ``policy`` over ``n_episodes`` episodes cycling through ``task_set``.

    All episodes run in one batch, one forward pass per time step.
    """
    if n_episodes < 1:
        raise InvalidConfigError("n_episodes must be >= 1")
    tasks = list(task_set)
    if not tasks:
        raise InvalidConfigError("empty task set")
    rng = rng if rng is not None else np.random.default_rng(0)
    picked = [tasks[i % len(tasks)] for i in range(n_episodes)]
    dtype = np.int64 if env.discrete else np.float64
    states = np.asarray([t[0] for t in picked], dtype=dtype)
    goals = np.asarray([t[1] for t in picked], dtype=dtype)
    success = np.array([bool(env.reward(s, g)) for s, g in zip(states, goals)])
    for _ in range(env.horizon):
        live = np.flatnonzero(~success)
        if not len(live):
            break
        x = policy.prepare(env, states[live], goals[live])
        acts = policy.greedy(x) if greedy else policy.sample(x, rng)[0]
        if env.discrete:
            states[live] = env.next_table[states[live], acts]
            success[live] = states[live] == goals[live]
        else:
            for i, a in zip(live, acts):
                states[i] = env.transition(states[i], int(a))
                success[i] = bool(env.reward(states[i], goals[i]))
    return _binomial(success.astype(np.float64))


# --------------------------------------------------------------------------- curriculum

@dataclass
class CurriculumSpec:
    n_bands: int = 4
    window: int = 200
    threshold: float = 0.6
    current_share: float = 0.7


@dataclass
class CurriculumState:
    band: int = 0
    outcomes: list = field(default_factory=list)
    history: list = field(default_factory=list)  # band after each advance


def curriculum_advance(state: CurriculumState, spec: CurriculumSpec, rolling_success: float | None = None) -> int:
    """Band index after checking the rolling success of the current band.

    Advances only once the window is full (or an explicit rate is given)
    and the rate reaches the threshold; the final band saturates.
    """
    if rolling_success is None:
        if len(state.outcomes) < spec.window:
            return state.band
        rolling_success = float(np.mean(state.outcomes[-spec.window:]))
    if rolling_success >= spec.threshold and state.band < spec.n_bands - 1:
        return state.band + 1
    return state.band


class Curriculum:
    """Distance-banded start/goal sampler for discrete envs."""

    def __init__(self, env: GoalMdp, spec: CurriculumSpec, rng: np.random.Generator):
        if not env.discrete:
            raise UnsupportedEnvError("distance-banded curriculum needs a discrete env")
        self.spec = spec
        self.rng = rng
        self.dist = env.distances()
        dmax = int(self.dist.max())
        edges = np.linspace(0, dmax, spec.n_bands + 1)
        self.bands = []
        for k in range(spec.n_bands):
            lo, hi = edges[k], edges[k + 1]
            sel = (self.dist > lo) & (self.dist <= hi) if k else (self.dist >= 1) & (self.dist <= hi)
            self.bands.append(np.argwhere(sel))
        self.band_matrix = np.full(self.dist.shape, -1, dtype=np.int64)
        for k, pairs in enumerate(self.bands):
            self.band_matrix[pairs[:, 0], pairs[:, 1]] = k
        self.state = CurriculumState()

    def band_of(self, s, g) -> int:
        return int(self.band_matrix[int(s), int(g)])

    def sample(self, env=None):
        b = self.state.band
        harder = [k for k in range(b + 1, self.spec.n_bands) if len(self.bands[k])]
        if harder and self.rng.random() >= self.spec.current_share:
            b = harder[int(self.rng.integers(len(harder)))]
        pairs = self.bands[b] if len(self.bands[b]) else np.concatenate([p for p in self.bands if len(p)])
        s, g = pairs[int(self.rng.integers(len(pairs)))]
        return int(s), int(g)

    def observe(self, trajectories) -> bool:
        """Record finished episodes; returns True when the band advanced."""
        for t in trajectories:
            if t.truncated:
                continue
            if self.band_of(t.states[0], t.goal) == self.state.band:
                self.state.outcomes.append(1.0 if t.success else 0.0)
        new = curriculum_advance(self.state, self.spec)
        if new != self.state.band:
            self.state.band = new
            self.state.outcomes = []
            self.state.history.append(new)
            return True
        return False


# --------------------------------------------------------------------------- report

@dataclass
class PhaseRecord:
    index: int
    kind: str
    samples: int
    cumulative_samples: int
    success_rate: float  # fraction of finished episodes that succeeded (online) or nan
    n_ppo_updates: int = 0
    n_sl_updates: int = 0
    dataset: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)
    augmentation: dict = field(default_factory=dict)
    success_uniform: float = float("nan")
    success_hard: float = float("nan")

    @property
    def dataset_size(self) -> int:
        return int(sum(self.dataset.values()))


@dataclass
class EvalPoint:
    cumulative_samples: int
    success_uniform: float
    success_hard: float
    phase_index: int


def _fmt(x) -> str:
    return "nan" if isinstance(x, float) and math.isnan(x) else f"{x:.6f}"


@dataclass
class RunReport:
    mode: str
    env_id: str
    seed: int
    phases: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    wall_clock: float = 0.0
    curriculum_bands: list = field(default_factory=list)
    final_params: dict = field(default_factory=dict)

    @property
    def cumulative_samples(self) -> int:
        return self.phases[-1].cumulative_samples if self.phases else 0

    @property
    def final_hard(self) -> float:
        return self.evals[-1].success_hard if self.evals else float("nan")

    @property
    def final_uniform(self) -> float:
        return self.evals[-1].success_uniform if self.evals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        buf.write("cumulative_samples,success_uniform,success_hard,phase_index\n")
        for e in self.evals:
            buf.write(f"{e.cumulative_samples},{_fmt(e.success_uniform)},{_fmt(e.success_hard)},{e.phase_index}\n")
        return buf.getvalue()

    def updates_csv(self) -> str:
        keys = sorted({k for p in self.phases for k in p.losses})
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        buf.write(",".join(["phase_index", "kind", "samples", "cumulative_samples", "rollout_success",
                            "n_ppo_updates", "n_sl_updates", "dataset_size"] + keys) + "\n")
        for p in self.phases:
            row = [str(p.index), p.kind, str(p.samples), str(p.cumulative_samples), _fmt(p.success_rate),
                   str(p.n_ppo_updates), str(p.n_sl_updates), str(p.dataset_size)]
            row += [_fmt(float(p.losses[k])) if k in p.losses else "" for k in keys]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def summary(self, include_wall_clock: bool = False) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "env": self.env_id,
            "seed": self.seed,
            "cumulative_samples": self.cumulative_samples,
            "n_phases": len(self.phases),
            "final_success_uniform": self.final_uniform,
            "final_success_hard": self.final_hard,
            "curriculum_bands": list(self.curriculum_bands),
            "phases": [asdict(p) for p in self.phases],
        }
        if include_wall_clock:
            out["wall_clock"] = self.wall_clock
        return out

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=True) + "\n"


# --------------------------------------------------------------------------- run loop

class _Streams:
    """Independent RNG streams so that toggling one component leaves the others untouched."""

    NAMES = ("init", "envs", "collect", "ppo", "augment", "sl", "eval", "curriculum")

    def __init__(self, seed: int):
        children = np.random.SeedSequence(int(seed)).spawn(len(self.NAMES))
        for name, ss in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(ss))
        self.init_seed = int(children[0].generate_state(1)[0] % (2 ** 31))
        self.env_seeds = [int(x) for x in children[1].generate_state(64)]


class _Runner:
    def __init__(self, cfg: PhaseConfig, env: GoalMdp, mode: str, env_id: str):
        if mode not in MODES:
            raise InvalidConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
        self.cfg = cfg.validate()
        if cfg.budget < cfg.n_online:
            raise InvalidConfigError(f"budget {cfg.budget} is smaller than one online phase ({cfg.n_online})")
        self.env = env
        self.mode = mode
        self.rng = _Streams(cfg.seed)
        self.agent = Agent.create(env, cfg, seed=self.rng.init_seed)
        self.workers = [env.spawn(self.rng.env_seeds[w % 64] + w // 64) for w in range(cfg.n_worker)]
        self.aug_env = env.spawn(self.rng.env_seeds[-1])
        self.spec = SubgoalSearchSpec(strategy=cfg.search_strategy, n_candidates=cfg.n_candidates,
                                      compose=cfg.compose, threshold=cfg.reduction_threshold)
        self.samples = 0
        self.report = RunReport(mode, env_id, cfg.seed)
        self.curriculum = None
        if cfg.curriculum:
            self.curriculum = Curriculum(env, CurriculumSpec(cfg.n_bands, cfg.curriculum_window), self.rng.curriculum)
        eval_env_rng = np.random.default_rng(self.rng.eval.integers(2 ** 63))
        self.uniform_tasks = [env.sample_task(eval_env_rng) for _ in range(cfg.eval_episodes)]
        self.hard_tasks = [env.hard_task()]
        self.success_set = SuccessSet(cfg.success_capacity) if mode in ("sil", "sir") else None
        self.iteration = 0

    # ----------------------------------------------------------------- helpers

    def _sampler(self):
        return self.curriculum.sample if self.curriculum else None

    def _phase(self, kind, samples, **kw) -> PhaseRecord:
        self.samples += samples
        rec = PhaseRecord(len(self.report.phases), kind, samples, self.samples, **kw)
        self.report.phases.append(rec)
        return rec

    def _evaluate(self, rec: PhaseRecord | None) -> None:
        pol = self.agent.policy
        n = self.cfg.eval_episodes
        uni = evaluate(pol, self.env, self.uniform_tasks, len(self.uniform_tasks))
        hard = evaluate(pol, self.env, self.hard_tasks, n)
        idx = rec.index if rec is not None else -1
        if rec is not None:
            rec.success_uniform, rec.success_hard = uni.mean, hard.mean
        self.report.evals.append(EvalPoint(self.samples, uni.mean, hard.mean, idx))
        log.info("samples=%d uniform=%.3f hard=%.3f", self.samples, uni.mean, hard.mean)

    def _chunk(self, sl_sampler=None, learn: bool = True):
        """Collect one chunk and (optionally) run the PPO update on it."""
        cfg = self.cfg
        batch = collect_rollouts(self.agent, self.workers, cfg, self.rng.collect, self._sampler())
        advanced = self.curriculum.observe(batch.trajectories) if self.curriculum else False
        stats = {"n_updates": 0}
        if learn:
            annotate_values(batch, self.agent.values, self.env, cfg.alpha, cfg.intrinsic)
            compute_gae(batch, self.agent.values, cfg.gamma, cfg.lam)
            stats = ppo_update(self.agent, batch, cfg, self.rng.ppo, self.env, sl_sampler() if sl_sampler else None)
        return batch, stats, advanced

    def _online_phase(self, failures: FailureBuffer | None, successes: list | None, learn=True,
                      joint_reduction=False, keep_all=None):
        cfg = self.cfg
        n_chunks = cfg.n_online // cfg.chunk
        steps, n_upd, done_eps, ok_eps = 0, 0, 0, 0
        losses: dict = {}
        aug_used = 0
        for _ in range(n_chunks):
            sl_sampler = None
            if self.success_set is not None:
                sl_sampler = lambda: self.success_set.sampler(self.agent.policy, self.env, cfg, self.rng.sl)  # noqa: E731
            batch, stats, advanced = self._chunk(sl_sampler, learn)
            steps += len(batch)
            n_upd += stats.get("n_updates", 0)
            for k, v in stats.items():
                if k != "n_updates" and isinstance(v, float):
                    losses.setdefault(k, []).append(v)
            finished = [t for t in batch.trajectories if not t.truncated]
            done_eps += len(finished)
            ok_eps += sum(t.success for t in finished)
            if failures is not None:
                failures.extend(batch.failures)
            if successes is not None:
                successes.extend(batch.successes)
            if keep_all is not None:
                keep_all.extend(batch.trajectories)
            if self.success_set is not None:
                aug_used += self._feed_success_set(batch, joint_reduction)
            if advanced and self.curriculum is not None:
                break  # adaptive switch to the offline phase
        rate = ok_eps / done_eps if done_eps else float("nan")
        return steps, n_upd, rate, {k: float(np.mean(v)) for k, v in losses.items()}, aug_used

    def _feed_success_set(self, batch, reduction: bool) -> int:
        cfg = self.cfg
        buf = FailureBuffer(cfg.failure_capacity)
        buf.extend(batch.failures)
        budget = self._aug_budget(cfg.chunk, cfg.chunk) if reduction else 0
        demos, stats = augment_failures(buf, self.aug_env, self.agent.policy, self.agent.values.sparse, self.spec,
                                        budget, self.rng.augment, reduction=reduction,
                                        reduction_fraction=cfg.reduction_fraction, relabel_mode=cfg.relabel_mode)
        trajs = batch.successes + demos
        if trajs:
            self.success_set.add(trajs, annotate(trajs, self.agent.values.sparse, self.env, cfg.gamma, cfg.lam))
        self.samples += stats.steps_used
        return stats.steps_used

    def _aug_budget(self, online_steps: int, pending: int = 0) -> int:
        """Environment steps reduction may spend, given ``pending`` uncounted online steps."""
        want = int(self.cfg.aug_budget_fraction * online_steps)
        return max(0, min(want, self.cfg.budget - self.samples - pending))

    def _room(self) -> bool:
        return self.samples + self.cfg.n_online <= self.cfg.budget

    # ----------------------------------------------------------------- modes

    def run(self) -> RunReport:
        t0 = time.perf_counter()
        self._evaluate(None)
        getattr(self, f"_run_{self.mode}")()
        if self.curriculum is not None:
            self.report.curriculum_bands = list(self.curriculum.state.history)
        self.report.wall_clock = time.perf_counter() - t0
        self.report.final_params = {k: f.params.copy() for k, f in self.agent.nets().items()}
        return self.report

    def _maybe_eval(self, rec, force=False):
        self.iteration += 1
        if force or self.iteration % self.cfg.eval_every == 0 or not self._room():
            self._evaluate(rec)

    def _run_pair(self):
        cfg = self.cfg
        carried = SuccessDataset()
        while self._room():
            failures, successes = FailureBuffer(cfg.failure_capacity), []
            steps, n_upd, rate, losses, _ = self._online_phase(failures, successes)
            self._phase(ONLINE, steps, success_rate=rate, n_ppo_updates=n_upd, losses=losses)
            budget = self._aug_budget(steps)
            demos, st = augment_failures(failures, self.aug_env, self.agent.policy, self.agent.values.sparse,
                                         self.spec, budget, self.rng.augment, reduction=cfg.reduction,
                                         reduction_fraction=cfg.reduction_fraction, relabel_mode=cfg.relabel_mode)
            ds = build_dataset(successes, demos, self.agent.values.sparse, self.env, cfg.gamma, cfg.lam)
            if cfg.persistent_dataset:
                carried.extend(ds)
                ds = carried
            sl = sl_update(self.agent.policy, ds, cfg, self.rng.sl, self.env, WEIGHTED_BC, self.agent.sl_opt)
            aug = {"relabeled": st.relabeled, "reduced": st.reduced, "attempts": st.attempts,
                   "failed_executions": st.failed_executions, "skipped_low_score": st.skipped_low_score}
            rec = self._phase(OFFLINE, st.steps_used, success_rate=float("nan"), n_sl_updates=sl["n_updates"],
                              dataset=ds.provenance_counts(), augmentation=aug,
                              losses={k: float(v) for k, v in sl.items() if k.startswith("nll") or k == "mean_weight"})
            self._maybe_eval(rec)

    def _run_joint(self, reduction: bool):
        while self._room():
            before = self.samples
            steps, n_upd, rate, losses, aug = self._online_phase(None, None, joint_reduction=reduction)
            self.samples = before  # _phase re-adds the total
            rec = self._phase(ONLINE, steps + aug, success_rate=rate, n_ppo_updates=n_upd, losses=losses,
                              dataset={"success_set_steps": self.success_set.n_steps} if self.success_set else {})
            self._maybe_eval(rec)

    def _run_ppo(self):
        self._run_joint(False)

    def _run_sil(self):
        self._run_joint(False)

    def _run_sir(self):
        self._run_joint(True)

    def _run_gcsl(self):
        cfg = self.cfg
        while self._room():
            trajs: list = []
            steps, _, rate, _, _ = self._online_phase(None, None, learn=False, keep_all=trajs)
            self._phase(ONLINE, steps, success_rate=rate)
            demos = [t if t.success else relabel(t, self.env) for t in trajs if len(t)]
            ds = SuccessDataset(demos, [np.zeros(len(t)) for t in demos])
            sl = sl_update(self.agent.policy, ds, cfg, self.rng.sl, self.env, GCSL_PLAIN, self.agent.sl_opt)
            counts = ds.provenance_counts()
            rec = self._phase(OFFLINE, 0, success_rate=float("nan"), n_sl_updates=sl["n_updates"], dataset=counts,
                              augmentation={"relabeled": counts.get(RELABELED, 0)},
                              losses={k: float(v) for k, v in sl.items() if k.startswith("nll")})
            self._maybe_eval(rec)


def _env_for(env_id, env_params, seed):
    return make_env(env_id, env_params or {}, seed=seed)


def run_pair(cfg: PhaseConfig, env_id: str = "maze", env_params: dict | None = None, env: GoalMdp | None = None,
             return_agent: bool = False):
    """Alternate online PPO phases and offline weighted-BC phases until the sample budget is spent."""
    env = env or _env_for(env_id, env_params, cfg.seed)
    runner = _Runner(cfg, env, PAIR, env_id)
    report = runner.run()
    return (report, runner.agent) if return_agent else report


def run_baseline(cfg: PhaseConfig, env_id: str = "maze", kind: str = "ppo", env_params: dict | None = None,
                 env: GoalMdp | None = None, return_agent: bool = False):
    """Run one of the comparison modes: ``ppo``, ``sil``, ``sir`` or ``gcsl``."""
    if kind not in BASELINES:
        raise InvalidConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    env = env or _env_for(env_id, env_params, cfg.seed)
    runner = _Runner(cfg, env, kind, env_id)
    report = runner.run()
    return (report, runner.agent) if return_agent else report


def run_mode(cfg: PhaseConfig, env_id: str, mode: str, env_params: dict | None = None, return_agent: bool = False):
    if mode == PAIR:
        return run_pair(cfg, env_id, env_params, return_agent=return_agent)
    return run_baseline(cfg, env_id, mode, env_params, return_agent=return_agent)


__all__ = [
    "PhaseConfig", "RunReport", "PhaseRecord", "EvalPoint", "EvalStats", "Curriculum", "CurriculumSpec",
    "CurriculumState", "curriculum_advance", "evaluate", "run_pair", "run_baseline", "run_mode", "MODES",
]
