import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairrl.approximator import CATEGORICAL, VALUE, Approximator, checksum, tabular_set
from pairrl.config import PhaseConfig
from pairrl.envs import RELABELED, Trajectory, make_chain_mdp, make_grid_maze
from pairrl.errors import ContractViolationError, InvalidParameterError
from pairrl.offline import (
    GCSL_PLAIN,
    SuccessDataset,
    SuccessSet,
    annotate,
    bc_weight,
    build_dataset,
    export_dataset,
    import_dataset,
    sl_update,
)


def maze_demos(env, rng, n=6):
    out = []
    for _ in range(n):
        s = int(rng.integers(env.n_states))
        states, actions = [s], []
        for _ in range(int(rng.integers(1, 6))):
            a = int(rng.integers(env.n_actions))
            states.append(env.transition(states[-1], a))
            actions.append(a)
        g = states[-1]
        k = next(i for i in range(1, len(states)) if states[i] == g)
        out.append(Trajectory(g, states[:k + 1], actions[:k], [0] * (k - 1) + [1], True, RELABELED))
    return out


def nets(env, seed=0):
    pi = Approximator("mlp", CATEGORICAL, n_actions=env.n_actions, input_dim=env.input_dim, hidden=(16,), seed=seed)
    v = Approximator("mlp", VALUE, input_dim=env.input_dim, hidden=(16,), squash=True, seed=seed + 1)
    return pi, v


def test_bc_weight_examples():
    assert bc_weight(0.0) == 1.0
    assert bc_weight(1.0, beta=1.0) == pytest.approx(math.e)
    assert bc_weight(1.0, beta=2.0) == pytest.approx(math.exp(0.5))
    assert bc_weight(5.0, clip=20.0) == 20.0
    assert bc_weight(5.0, clip=None) == pytest.approx(math.exp(5))
    for beta in (0.0, -1.0):
        with pytest.raises(InvalidParameterError):
            bc_weight(1.0, beta)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5))
def test_bc_weight_positive_and_monotone(a, b, beta):
    wa, wb = bc_weight(a, beta), bc_weight(b, beta)
    assert wa > 0 and wb > 0
    if a <= b:
        assert wa <= wb


def test_annotation_of_one_step_demo_with_zero_value():
    env = make_chain_mdp(3)
    v = Approximator("tabular", VALUE, n_states=env.n_states, n_goals=env.n_goals)
    [ann] = annotate([Trajectory(1, [0, 1], [1], [1], True)], v, env, 0.99)
    np.testing.assert_allclose(ann, [1.0])


def test_annotation_matches_hand_gae():
    env = make_chain_mdp(3)
    v = Approximator("tabular", VALUE, n_states=env.n_states, n_goals=env.n_goals)
    tabular_set(v, 0, 2, 0.5)
    tabular_set(v, 1, 2, 0.9)
    gamma, lam = 0.9, 0.8
    [ann] = annotate([Trajectory(2, [0, 1, 2], [1, 1], [0, 1], True)], v, env, gamma, lam)
    d1 = 1.0 - 0.9
    d0 = gamma * 0.9 - 0.5
    np.testing.assert_allclose(ann, [d0 + gamma * lam * d1, d1])


def test_build_dataset_rejects_failures_and_empties():
    env = make_chain_mdp(3)
    v = Approximator("tabular", VALUE, n_states=env.n_states, n_goals=env.n_goals)
    with pytest.raises(ContractViolationError):
        build_dataset([Trajectory(3, [0, 4], [0], [0], False)], [], v, env)
    with pytest.raises(ContractViolationError):
        build_dataset([], [Trajectory(0, [0], [], [], True)], v, env)


def test_sl_update_touches_policy_only_and_lowers_nll():
    env = make_grid_maze()
    rng = np.random.default_rng(0)
    pi, v = nets(env)
    ds = build_dataset([], maze_demos(env, rng, 20), v, env)
    v_sum = checksum(v)
    anns = [a.copy() for a in ds.annotations]
    stats = sl_update(pi, ds, PhaseConfig(m_epoch=5, m=16), rng, env)
    assert checksum(v) == v_sum
    for a, b in zip(anns, ds.annotations):
        np.testing.assert_array_equal(a, b)
    assert stats["n_updates"] == 5 * math.ceil(ds.n_steps / 16)
    assert stats["nll_after"] < stats["nll_before"]


def test_gcsl_equals_weighted_bc_with_unit_weights():
    env = make_grid_maze()
    demos = maze_demos(env, np.random.default_rng(1), 10)
    ds = SuccessDataset(demos, [np.zeros(len(t)) for t in demos])
    a, _ = nets(env, 3)
    b = a.copy()
    cfg = PhaseConfig(m_epoch=3, m=8)
    sl_update(a, ds, cfg, np.random.default_rng(9), env)
    sl_update(b, ds, cfg, np.random.default_rng(9), env, mode=GCSL_PLAIN)
    np.testing.assert_array_equal(a.params, b.params)


def test_empty_dataset_is_a_noop():
    env = make_grid_maze()
    pi, _ = nets(env)
    before = pi.params.copy()
    stats = sl_update(pi, SuccessDataset(), PhaseConfig(), np.random.default_rng(0), env)
    assert stats["n_updates"] == 0
    np.testing.assert_array_equal(before, pi.params)


def test_unknown_sl_mode():
    env = make_grid_maze()
    pi, _ = nets(env)
    with pytest.raises(InvalidParameterError):
        sl_update(pi, SuccessDataset(), PhaseConfig(), np.random.default_rng(0), env, mode="dagger")


def test_sl_update_is_deterministic_given_seed():
    env = make_grid_maze()
    demos = maze_demos(env, np.random.default_rng(2), 8)
    _, v = nets(env)
    ds = build_dataset(demos, [], v, env)
    outs = []
    for _ in range(2):
        pi, _ = nets(env, 5)
        sl_update(pi, ds, PhaseConfig(m_epoch=2, m=4), np.random.default_rng(3), env)
        outs.append(pi.params)
    np.testing.assert_array_equal(*outs)


def test_export_import_round_trip(tmp_path):
    env = make_grid_maze()
    _, v = nets(env)
    ds = build_dataset(maze_demos(env, np.random.default_rng(4), 5), [], v, env)
    path = tmp_path / "ds.jsonl"
    export_dataset(ds, path)
    back = import_dataset(path)
    assert len(back) == len(ds)
    for t, u, a, b in zip(ds.trajectories, back.trajectories, ds.annotations, back.annotations):
        assert t.states == u.states and t.actions == u.actions and t.goal == u.goal
        assert u.provenance == RELABELED
        np.testing.assert_array_equal(a, b)


def test_success_set_evicts_oldest_by_steps():
    ss = SuccessSet(capacity_steps=5)
    ts = [Trajectory(2, [0, 1, 2], [1, 1], [0, 1], True) for _ in range(4)]
    ss.add(ts, [np.zeros(2)] * 4)
    assert ss.n_steps == 4 and len(ss) == 2
    assert ss.trajectories[0] is ts[2]


def test_success_set_sampler_batch():
    env = make_grid_maze()
    pi, v = nets(env)
    demos = maze_demos(env, np.random.default_rng(6), 10)
    ss = SuccessSet()
    assert SuccessSet().sampler(pi, env, PhaseConfig(), np.random.default_rng(0))() is None
    ss.add(demos, annotate(demos, v, env, 0.99))
    batch = ss.sampler(pi, env, PhaseConfig(m=7), np.random.default_rng(0))()
    assert batch["inputs"].shape == (7, env.input_dim)
    assert (batch["weights"] > 0).all() and (batch["weights"] <= 20).all()
