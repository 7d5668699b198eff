"""Command-line entry point: ``pairrl <command> [flags]``.

Config files are plain ``key = value`` lines (``#`` starts a comment).
Keys are the ``PhaseConfig`` field names (case-insensitive, with a few
aliases such as ``N_online`` or ``alpha``/``α``), ``env.<param>`` for env
constructor arguments, and the run-level keys in ``RUN_KEYS``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import dataclass, field, fields

import numpy as np

from . import theory
from .approximator import atomic_write_text, load_checkpoint, save_checkpoint
from .augmentation import SubgoalSearchSpec, score_map_csv, search_subgoal
from .config import PhaseConfig
from .driver import MODES, PAIR, evaluate, run_mode
from .envs import ENV_BUILDERS, make_env
from .errors import ConfigKeyError, InvalidConfigError, PairError, ShapeError

log = logging.getLogger("pairrl")

COMMANDS = ("train", "baseline", "theory", "eval", "export-heatmap")
RUN_KEYS = {
    "command": str, "env": str, "mode": str, "out": str, "seeds": str, "checkpoint": str,
    "theory.d": str, "theory.mode": str, "theory.seeds": int,
    "heatmap.start": str, "heatmap.goal": str,
}
ALIASES = {
    "α": "alpha", "β": "beta", "γ": "gamma", "λ": "lam", "lambda": "lam", "ε": "clip_eps", "eps": "clip_eps",
    "clip": "clip_eps", "entropy_coef": "ent_coef", "csl": "c_sl", "c^sl": "c_sl", "seed": "seeds",
}
_PHASE_FIELDS = {f.name: f.type for f in fields(PhaseConfig)}
# per-env defaults layered under explicit keys; reduction stays off for pushing
ENV_DEFAULTS = {"pusher": {"reduction": False}}


@dataclass
class RunConfig:
    command: str = "train"
    env: str = "maze"
    env_params: dict = field(default_factory=dict)
    mode: str = PAIR
    out: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    phase: PhaseConfig = field(default_factory=PhaseConfig)
    checkpoint: str = ""
    theory_D: list = field(default_factory=lambda: [8, 16, 32, 64])
    theory_mode: str = "both"
    theory_seeds: int = 10
    heatmap_start: str = ""
    heatmap_goal: str = ""
    explicit: set = field(default_factory=set, repr=False, compare=False)

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise InvalidConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.seeds:
            raise InvalidConfigError("seed list is empty")
        if self.env not in ENV_BUILDERS:
            raise InvalidConfigError(f"unknown env {self.env!r}")
        if self.theory_mode not in ("both", theory.WITH_REDUCTION, theory.WITHOUT_REDUCTION):
            raise InvalidConfigError(f"unknown theory mode {self.theory_mode!r}")
        self.phase.validate()
        return self

    def resolved_text(self) -> str:
        """Every key with its effective value, in the config-file syntax."""
        lines = [
            f"command = {self.command}", f"env = {self.env}", f"mode = {self.mode}", f"out = {self.out}",
            f"seeds = {','.join(map(str, self.seeds))}", f"checkpoint = {self.checkpoint}",
            f"theory.D = {','.join(map(str, self.theory_D))}", f"theory.mode = {self.theory_mode}",
            f"theory.seeds = {self.theory_seeds}",
            f"heatmap.start = {self.heatmap_start}", f"heatmap.goal = {self.heatmap_goal}",
        ]
        for k in sorted(self.env_params):
            lines.append(f"env.{k} = {self.env_params[k]}")
        for k, v in self.phase.to_dict().items():
            if k == "seed":
                continue
            lines.append(f"{k} = {','.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidConfigError(f"expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str, typ):
    try:
        if typ in (bool, "bool"):
            return _parse_bool(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        if typ in (tuple, "tuple"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError:
        raise InvalidConfigError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None


def canonical_key(key: str) -> str:
    k = key.strip()
    if k.lower().startswith("env."):
        return "env." + k[4:]
    k = ALIASES.get(k, ALIASES.get(k.lower(), k.lower()))
    return k


def read_pairs(path) -> list:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            pairs.append((k.strip(), v.strip()))
    return pairs


def apply_pairs(cfg: RunConfig, pairs) -> RunConfig:
    for key, raw in pairs:
        k = canonical_key(key)
        cfg.explicit.add(k)
        if k.startswith("env."):
            cfg.env_params[k[4:]] = raw
        elif k in RUN_KEYS:
            if k == "seeds":
                cfg.seeds = [int(x) for x in raw.split(",") if x.strip()] if raw else []
            elif k == "theory.d":
                cfg.theory_D = [int(x) for x in raw.split(",") if x.strip()]
            elif k == "theory.seeds":
                cfg.theory_seeds = _coerce(k, raw, int)
            elif k.startswith("heatmap."):
                setattr(cfg, "heatmap_" + k.split(".", 1)[1], raw)
            elif k == "theory.mode":
                cfg.theory_mode = raw
            else:
                setattr(cfg, k, raw)
        elif k in _PHASE_FIELDS:
            setattr(cfg.phase, k, _coerce(key, raw, _PHASE_FIELDS[k]))
        else:
            raise ConfigKeyError(key)
    return cfg


def parse_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (list of ``(key, value)`` or ``key=value`` strings)."""
    cfg = RunConfig()
    if path:
        apply_pairs(cfg, read_pairs(path))
    pairs = []
    for item in overrides or []:
        if isinstance(item, str):
            if "=" not in item:
                raise InvalidConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            pairs.append((k.strip(), v.strip()))
        else:
            pairs.append(item)
    apply_pairs(cfg, pairs)
    for k, v in ENV_DEFAULTS.get(cfg.env, {}).items():
        if k not in cfg.explicit:
            setattr(cfg.phase, k, v)
    return cfg


# --------------------------------------------------------------------------- commands

def _env_params(cfg: RunConfig) -> dict:
    return dict(cfg.env_params)


def _run_training(cfg: RunConfig) -> dict:
    mode = cfg.mode
    if cfg.command == "baseline" and mode == PAIR:
        raise InvalidConfigError("baseline command needs --mode ppo|sil|sir|gcsl")
    results = {}
    for seed in cfg.seeds:
        phase = PhaseConfig(**{**cfg.phase.to_dict(), "hidden": tuple(cfg.phase.hidden), "seed": seed})
        report, agent = run_mode(phase, cfg.env, mode, _env_params(cfg), return_agent=True)
        sub = os.path.join(cfg.out, f"{mode}_seed{seed}")
        atomic_write_text(os.path.join(sub, "metrics.csv"), report.to_csv())
        atomic_write_text(os.path.join(sub, "updates.csv"), report.updates_csv())
        atomic_write_text(os.path.join(sub, "summary.json"), report.summary_json())
        save_checkpoint(os.path.join(sub, "checkpoint.npz"), agent.nets(), agent.optimizers(),
                        extra={"env": cfg.env, "env_params": _env_params(cfg), "mode": mode, "seed": seed})
        results[seed] = {"final_success_hard": report.final_hard, "final_success_uniform": report.final_uniform}
        log.info("seed %d done: hard=%.3f uniform=%.3f (%.1fs)", seed, report.final_hard, report.final_uniform,
                 report.wall_clock)
    return results


def _run_theory(cfg: RunConfig) -> dict:
    modes = [theory.WITH_REDUCTION, theory.WITHOUT_REDUCTION] if cfg.theory_mode == "both" else [cfg.theory_mode]
    records = []
    seeds = list(range(cfg.theory_seeds))
    for D in cfg.theory_D:
        for m in modes:
            records.extend(theory.run_doubling_experiment(D, m, seeds))
    atomic_write_text(os.path.join(cfg.out, "separation.csv"), theory.separation_csv(records))
    return {"rows": len(records)}


def _load_policy(cfg: RunConfig):
    if not cfg.checkpoint:
        raise InvalidConfigError("this command needs checkpoint=<path>")
    nets, _, extra = load_checkpoint(cfg.checkpoint)
    env_id = cfg.env if "env" in cfg.explicit else extra.get("env", cfg.env)
    params = {**extra.get("env_params", {}), **_env_params(cfg)}
    env = make_env(env_id, params)
    pol = nets["policy"]
    if pol.mode == "mlp" and pol.input_dim != env.input_dim:
        raise ShapeError(f"checkpoint expects input width {pol.input_dim}, env {env_id} gives {env.input_dim}")
    if pol.n_actions != env.n_actions:
        raise ShapeError(f"checkpoint has {pol.n_actions} actions, env has {env.n_actions}")
    return nets, env


def _run_eval(cfg: RunConfig) -> dict:
    nets, env = _load_policy(cfg)
    rng = np.random.default_rng(cfg.seeds[0])
    tasks = [env.sample_task(rng) for _ in range(cfg.phase.eval_episodes)]
    uni = evaluate(nets["policy"], env, tasks, len(tasks))
    hard = evaluate(nets["policy"], env, [env.hard_task()], cfg.phase.eval_episodes)
    out = {"success_uniform": uni.mean, "stderr_uniform": uni.stderr, "n_uniform": uni.n,
           "success_hard": hard.mean, "stderr_hard": hard.stderr, "n_hard": hard.n}
    atomic_write_text(os.path.join(cfg.out, "eval.json"), json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def _parse_point(raw: str, env):
    if env.discrete:
        return int(raw)
    return np.asarray([float(x) for x in raw.split(",")], dtype=np.float64)


def export_heatmap(checkpoint, env=None, s0=None, g=None, spec: SubgoalSearchSpec | None = None, rng=None) -> str:
    """Composed-value CSV over every subgoal candidate for the task ``(s0, g)``.

    ``checkpoint`` is a path or a ``{name: Approximator}`` dict holding ``v_sparse``.
    """
    nets = checkpoint if isinstance(checkpoint, dict) else load_checkpoint(checkpoint)[0]
    v = nets["v_sparse"]
    if v.mode == "mlp" and v.input_dim != env.input_dim:
        raise ShapeError(f"value net expects input width {v.input_dim}, env gives {env.input_dim}")
    if v.mode == "tabular" and (v.n_states != env.n_states or v.n_goals != env.n_goals):
        raise ShapeError("tabular value table does not match the env")
    if s0 is None or g is None:
        hs, hg = env.hard_task()
        s0 = hs if s0 is None else s0
        g = hg if g is None else g
    res = search_subgoal(v, env, s0, g, spec or SubgoalSearchSpec(), rng or np.random.default_rng(0))
    return score_map_csv(res, env)


def _run_heatmap(cfg: RunConfig) -> dict:
    nets, env = _load_policy(cfg)
    s0 = _parse_point(cfg.heatmap_start, env) if cfg.heatmap_start else None
    g = _parse_point(cfg.heatmap_goal, env) if cfg.heatmap_goal else None
    p = cfg.phase
    spec = SubgoalSearchSpec(strategy=p.search_strategy, n_candidates=p.n_candidates, compose=p.compose,
                             threshold=p.reduction_threshold)
    text = export_heatmap(nets, env, s0, g, spec, np.random.default_rng(cfg.seeds[0]))
    atomic_write_text(os.path.join(cfg.out, "heatmap.csv"), text)
    return {"rows": text.count("\n") - 1}


def execute(cfg: RunConfig) -> int:
    """Run ``cfg.command``; returns a process exit status. Failures land in ``failure.json``."""
    try:
        cfg.validate()
        os.makedirs(cfg.out, exist_ok=True)
        atomic_write_text(os.path.join(cfg.out, "resolved_config.txt"), cfg.resolved_text())
        handler = {"train": _run_training, "baseline": _run_training, "theory": _run_theory,
                   "eval": _run_eval, "export-heatmap": _run_heatmap}[cfg.command]
        handler(cfg)
        return 0
    except (PairError, OSError, ValueError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        report = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        if getattr(exc, "key", None) is not None:
            report["key"] = exc.key
        if getattr(exc, "diagnostics", None):
            report["diagnostics"] = exc.diagnostics
        try:
            atomic_write_text(os.path.join(cfg.out, "failure.json"), json.dumps(report, indent=2, default=str) + "\n")
        except OSError:
            pass
        return 2 if isinstance(exc, InvalidConfigError) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairrl", description="Phasic RL + weighted BC with task reduction.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", help="comma-separated seed list")
    p.add_argument("--env", choices=sorted(ENV_BUILDERS))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--budget", type=int, help="total environment-step budget")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("PAIR_LOG_LEVEL", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    overrides = [("command", args.command)]
    for flag, key in (("seed", "seeds"), ("env", "env"), ("mode", "mode"), ("budget", "budget"), ("out", "out")):
        val = getattr(args, flag)
        if val is not None:
            overrides.append((key, str(val)))
    overrides.extend(args.set)
    try:
        cfg = parse_config(args.config, overrides)
    except PairError as exc:
        print(f"pairrl: {exc}", file=sys.stderr)
        return 2
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
