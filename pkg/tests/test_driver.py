import math

import numpy as np
import pytest

from pairrl.approximator import CATEGORICAL, Approximator, tabular_set
from pairrl.config import PhaseConfig
from pairrl.driver import (
    OFFLINE,
    ONLINE,
    Curriculum,
    CurriculumSpec,
    CurriculumState,
    curriculum_advance,
    evaluate,
    run_baseline,
    run_mode,
    run_pair,
)
from pairrl.envs import make_chain_mdp, make_grid_maze
from pairrl.errors import InvalidConfigError


def tiny(**kw):
    base = dict(n_worker=2, n_steps=32, n_online=64, budget=64, eval_episodes=5, hidden=(8,), n_epoch=1,
                n_batch=2, m_epoch=1, m=16)
    base.update(kw)
    return PhaseConfig(**base)


def test_budget_equal_to_one_phase_gives_two_records():
    rep = run_pair(tiny(), "maze")
    assert [p.kind for p in rep.phases] == [ONLINE, OFFLINE]
    assert rep.phases[0].samples == 64 and rep.phases[0].n_ppo_updates == 2


def test_pair_alternates_phases_and_accounts_samples():
    cfg = tiny(budget=400)
    rep = run_pair(cfg, "maze")
    kinds = [p.kind for p in rep.phases]
    assert kinds == [ONLINE, OFFLINE] * (len(kinds) // 2)
    assert sum(p.samples for p in rep.phases) == rep.cumulative_samples <= cfg.budget
    for p in rep.phases:
        if p.kind == ONLINE:
            assert p.samples == cfg.n_online and p.n_sl_updates == 0
        else:
            assert p.n_ppo_updates == 0
            assert p.samples <= math.ceil(cfg.aug_budget_fraction * cfg.n_online)


def test_budget_below_one_phase_is_rejected():
    with pytest.raises(InvalidConfigError):
        run_pair(tiny(budget=10), "maze")
    with pytest.raises(InvalidConfigError):
        run_baseline(tiny(), "maze", "her")


@pytest.mark.parametrize("mode", ["pair", "ppo", "sil", "sir", "gcsl"])
def test_same_seed_same_run(mode):
    a = run_mode(tiny(budget=128, seed=3), "maze", mode)
    b = run_mode(tiny(budget=128, seed=3), "maze", mode)
    assert a.to_csv() == b.to_csv()
    assert a.updates_csv() == b.updates_csv()
    for k in a.final_params:
        np.testing.assert_array_equal(a.final_params[k], b.final_params[k])


def test_ppo_mode_has_no_dataset_or_sl():
    rep = run_baseline(tiny(budget=128), "maze", "ppo")
    assert all(p.kind == ONLINE and p.dataset_size == 0 and p.n_sl_updates == 0 for p in rep.phases)


def test_gcsl_mode_has_no_ppo_updates():
    rep = run_baseline(tiny(budget=128), "maze", "gcsl")
    assert all(p.n_ppo_updates == 0 for p in rep.phases)
    assert any(p.n_sl_updates > 0 for p in rep.phases)


def test_sil_with_zero_coefficient_reproduces_ppo():
    cfg = tiny(budget=128, c_sl=0.0)
    a = run_baseline(cfg, "maze", "sil")
    b = run_baseline(cfg, "maze", "ppo")
    for k in b.final_params:
        np.testing.assert_array_equal(a.final_params[k], b.final_params[k])


def test_csv_schema():
    rep = run_pair(tiny(budget=128), "maze")
    lines = rep.to_csv().splitlines()
    assert lines[0] == "# schema_version=1"
    assert lines[1] == "cumulative_samples,success_uniform,success_hard,phase_index"
    assert len(lines) == 2 + len(rep.evals)
    assert "wall_clock" not in rep.summary()


def test_curriculum_run_records_bands():
    rep = run_pair(tiny(budget=256, curriculum=True, curriculum_window=5), "maze")
    assert all(b1 < b2 for b1, b2 in zip(rep.curriculum_bands, rep.curriculum_bands[1:]))


# curriculum ------------------------------------------------------------------

def test_curriculum_advance_examples():
    spec = CurriculumSpec(n_bands=3, window=4, threshold=0.6)
    st = CurriculumState(band=0, outcomes=[1, 1, 1])
    assert curriculum_advance(st, spec) == 0  # window not yet full
    st.outcomes.append(0)
    assert curriculum_advance(st, spec) == 1  # 0.75 >= 0.6
    assert curriculum_advance(CurriculumState(band=0), spec, 0.59) == 0
    assert curriculum_advance(CurriculumState(band=0), spec, 0.6) == 1
    assert curriculum_advance(CurriculumState(band=2), spec, 1.0) == 2


def test_curriculum_bands_partition_reachable_pairs():
    env = make_grid_maze()
    cur = Curriculum(env, CurriculumSpec(n_bands=4), np.random.default_rng(0))
    d = env.distances()
    assert ((cur.band_matrix >= 0) == (d >= 1)).all()
    assert sum(len(b) for b in cur.bands) == int((d >= 1).sum())
    for k in range(3):
        assert d[tuple(cur.bands[k].T)].max() <= d[tuple(cur.bands[k + 1].T)].min()


def test_curriculum_mostly_samples_current_band():
    env = make_grid_maze()
    cur = Curriculum(env, CurriculumSpec(n_bands=4, current_share=0.7), np.random.default_rng(1))
    hits = sum(cur.band_of(*cur.sample()) == 0 for _ in range(2000))
    assert 0.65 < hits / 2000 < 0.75


# evaluation ------------------------------------------------------------------

def chain_oracle(D):
    env = make_chain_mdp(D)
    pi = Approximator("tabular", CATEGORICAL, n_actions=2, n_states=env.n_states, n_goals=env.n_goals)
    for s in range(D):
        for g in range(s + 1, D + 1):
            tabular_set(pi, s, g, [-50.0, 50.0])
    return env, pi


def test_evaluate_oracle_policy_solves_every_task():
    env, pi = chain_oracle(6)
    tasks = [(s, g) for s in range(6) for g in range(s + 1, 7)]
    res = evaluate(pi, env, tasks, 40)
    assert res.mean == 1.0 and res.stderr == 0.0 and res.n == 40


def test_uniform_policy_fails_long_chain():
    env = make_chain_mdp(16)
    pi = Approximator("tabular", CATEGORICAL, n_actions=2, n_states=env.n_states, n_goals=env.n_goals)
    res = evaluate(pi, env, [env.hard_task()], 100, greedy=False, rng=np.random.default_rng(0))
    # per-episode success is 2^-16
    assert res.mean == 0.0


def test_evaluate_edge_cases():
    env, pi = chain_oracle(3)
    assert math.isnan(evaluate(pi, env, [(0, 3)], 1).stderr)
    with pytest.raises(InvalidConfigError):
        evaluate(pi, env, [], 5)
    with pytest.raises(InvalidConfigError):
        evaluate(pi, env, [(0, 3)], 0)
