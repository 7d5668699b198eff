import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairrl.approximator import CATEGORICAL, Approximator, tabular_set
from pairrl.envs import ChainMdp, make_grid_maze, make_point_pusher
from pairrl.errors import ContractViolationError, InvalidParameterError, UnsupportedEnvError
from pairrl.theory import (
    WITH_REDUCTION,
    WITHOUT_REDUCTION,
    HorizonRecord,
    IdealizedPipeline,
    ReachabilityTable,
    bfs_reachable,
    log2_iteration_bound,
    make_hard_instance,
    measure_horizon,
    run_doubling_experiment,
    separation_csv,
)


def test_bfs_examples():
    env = ChainMdp(9)
    assert bfs_reachable(env, 0, 9) == 9
    assert bfs_reachable(env, env.dead, 0) is None
    grid = make_grid_maze(3, 3, ".../.../...")
    assert bfs_reachable(grid, grid.state_of((0, 0)), grid.state_of((2, 2))) == 4


def test_non_enumerable_env_is_rejected():
    with pytest.raises(UnsupportedEnvError):
        ReachabilityTable.of(make_point_pusher())


@pytest.mark.parametrize("env", [ChainMdp(7), make_grid_maze(), make_grid_maze(5, 4, "...../.#.#./...../..#..")])
def test_reachability_table_metric_properties(env):
    t = ReachabilityTable.of(env)
    d = t.dist
    assert (np.diag(d) == 0).all()
    fin = t.finite
    for b in range(len(d)):
        ab = np.where(fin[:, b][:, None] & fin[b][None, :], d[:, b][:, None] + d[b][None, :], np.iinfo(np.int64).max)
        # wherever a->b->c is finite, a->c is finite and no longer
        assert (fin | (ab == np.iinfo(np.int64).max)).all()
        assert (np.where(fin, d, 0) <= ab).all()


def test_one_step_policy_has_horizon_one():
    env = ChainMdp(6)
    pipe = IdealizedPipeline(env)
    assert pipe.horizon() == 1


def test_oracle_policy_has_full_horizon():
    env = ChainMdp(6)
    table = np.full((env.n_states, env.n_goals), -1, np.int64)
    for s in range(7):
        table[s, s + 1:7] = 1
        table[s, env.dead] = 0
    assert measure_horizon(table, env) == 6
    pi = Approximator("tabular", CATEGORICAL, n_actions=2, n_states=env.n_states, n_goals=env.n_goals)
    for s in range(7):
        for g in range(s + 1, 7):
            tabular_set(pi, s, g, [0.0, 1.0])
        tabular_set(pi, s, env.dead, [1.0, 0.0])
    assert measure_horizon(pi, env) == 6


def test_uniform_policy_horizon_is_zero():
    # every greedy choice is a tie, so no pair at distance 1 is reliably solved
    inst = make_hard_instance(8)
    assert measure_horizon(inst.policy, inst.env) == 0


def test_hard_instance_examples():
    two = make_hard_instance(2)
    assert two.env.n_states == 4 and two.diameter == 2
    assert two.random_success_probability() == pytest.approx(0.25)
    assert make_hard_instance(10).random_success_probability() == pytest.approx(2.0 ** -10)
    with pytest.raises(InvalidParameterError):
        make_hard_instance(1)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10))
def test_random_rollout_probability_matches_product(D, s):
    inst = make_hard_instance(D)
    s = min(s, D - 1)
    assert inst.random_success_probability(s) == pytest.approx(2.0 ** -(D - s))


@pytest.mark.parametrize("D", [8, 16, 32, 64])
def test_with_reduction_doubles_and_is_logarithmic(D):
    [rec] = run_doubling_experiment(D, WITH_REDUCTION, seeds=(0,))
    assert rec.ells[0] == 1 and rec.ells[-1] == D
    assert rec.doubling_holds() and rec.monotone() and rec.committed_consistent
    assert rec.iterations <= log2_iteration_bound(D) + 1


def test_maze_doubling():
    env = make_grid_maze()
    for rec in run_doubling_experiment(mode=WITH_REDUCTION, seeds=(0, 1, 2), env=env):
        assert rec.doubling_holds() and rec.ells[-1] == env.diameter


def test_without_reduction_is_slow_and_monotone():
    recs = run_doubling_experiment(16, WITHOUT_REDUCTION, seeds=range(5))
    assert all(r.monotone() and r.committed_consistent for r in recs)
    assert np.median([r.iterations for r in recs]) >= 8


def test_without_reduction_warns_off_chain():
    with pytest.warns(UserWarning):
        run_doubling_experiment(mode=WITHOUT_REDUCTION, seeds=(0,), env=make_grid_maze(3, 3, ".../.../..."))


def test_midpoint_precheck():
    assert ReachabilityTable.of(make_grid_maze()).midpoint_ok()
    # one-way 3-cycle: 0->1->2->0; d(0,2)=2 has midpoint 1, so the check passes
    ring = ReachabilityTable(np.array([[0, 1, 2], [2, 0, 1], [1, 2, 0]]))
    assert ring.midpoint_ok()
    # a pair at distance 2 with no intermediate state is malformed
    bad = ReachabilityTable(np.array([[0, 2], [-1, 0]]))
    assert not bad.midpoint_ok()


def test_contract_violation_when_midpoint_missing(monkeypatch):
    monkeypatch.setattr(ReachabilityTable, "midpoint_ok", lambda self: False)
    with pytest.raises(ContractViolationError):
        run_doubling_experiment(4, WITH_REDUCTION)


def test_record_helpers_and_csv():
    rec = HorizonRecord(8, WITH_REDUCTION, 0, [1, 2, 5, 8], samples=42)
    assert rec.iterations == 3 and rec.doubling_holds() and rec.monotone()
    assert not HorizonRecord(8, WITH_REDUCTION, 0, [1, 3, 4]).doubling_holds()
    csv = separation_csv([rec]).splitlines()
    assert csv[0] == "D,mode,seed,iterations,samples,ell_sequence"
    assert csv[1] == "8,with-reduction,0,3,42,1;2;5;8"


def test_experiment_argument_checks():
    with pytest.raises(InvalidParameterError):
        run_doubling_experiment(8, "sideways")
    with pytest.raises(InvalidParameterError):
        run_doubling_experiment()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        run_doubling_experiment(4, WITHOUT_REDUCTION, seeds=(0,))
