import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_oracle
from pairrl.envs import (
    ChainMdp,
    Trajectory,
    achieved_goal,
    env_reset,
    env_step,
    make_chain_mdp,
    make_env,
    make_grid_maze,
    make_point_pusher,
    reward_predicate,
)
from pairrl.errors import (
    EpisodeFinishedError,
    InvalidActionError,
    InvalidLayoutError,
    InvalidParameterError,
    InvalidTaskError,
    UnsupportedEnvError,
)


# chain ---------------------------------------------------------------------

def test_chain_construction():
    env = make_chain_mdp(4)
    assert env.n_states == 6 and env.n_actions == 2
    assert env.horizon == 6
    d = env.distances()
    assert d[0, 4] == 4
    assert (d[5, :5] == -1).all()


def test_chain_transitions_from_footnote():
    env = make_chain_mdp(6)
    env.reset(task=(2, 6))
    assert env_step(env, 1) == (3, 0, False)
    env.reset(task=(2, 6))
    assert env_step(env, 0) == (7, 0, False)
    assert env.transition(7, 1) == 7  # absorbing


def test_chain_every_inner_state_has_one_advance_and_one_kill():
    env = ChainMdp(9)
    for i in range(env.D):
        outs = {env.transition(i, a) for a in range(2)}
        assert outs == {i + 1, env.dead}


def test_chain_fixed_task_passthrough():
    env = make_chain_mdp(5)
    assert env_reset(env, task=(0, 5)) == (0, 5)


def test_chain_rejects_small_D():
    with pytest.raises(InvalidParameterError):
        make_chain_mdp(0)


def test_chain_dead_state_reward():
    env = make_chain_mdp(5)
    assert reward_predicate(env, env.dead, 5) == 0
    assert achieved_goal(env, 3) == 3


def test_success_step_ends_episode():
    env = make_chain_mdp(3)
    env.reset(task=(2, 3))
    ns, r, done = env.step(1)
    assert (ns, r, done) == (3, 1, True)
    with pytest.raises(EpisodeFinishedError):
        env.step(1)


def test_invalid_action_and_task():
    env = make_chain_mdp(3)
    env.reset(task=(0, 3))
    with pytest.raises(InvalidActionError):
        env.step(2)
    with pytest.raises(InvalidTaskError):
        env.reset(task=(0, 99))
    with pytest.raises(InvalidTaskError):
        env.reset(task=(1, 1))


def test_episode_length_bounded_by_horizon():
    env = make_grid_maze(horizon=7)
    env.reset(task=(0, 43))
    n, done = 0, False
    while not done:
        _, _, done = env.step(4)
        n += 1
    assert n == 7


# maze ----------------------------------------------------------------------

def test_u_maze_layout_and_hard_task():
    env = make_grid_maze()
    assert env.n_states == 49 - 5
    s, g = env.hard_task()
    assert env.cell(s) == (0, 0) and env.cell(g) == (0, 6)
    dist = bfs_oracle(env.next_table, s)
    # around the wall: down 5, across 6, up 5
    assert dist[g] == 16 == env.diameter
    assert max(d for d in dist if d is not None) == 16


def test_open_3x3_diameter():
    env = make_grid_maze(3, 3, ".../.../...")
    assert env.diameter == 4


def test_sealed_maze_is_rejected():
    with pytest.raises(InvalidLayoutError):
        make_grid_maze(5, 3, "..#../..#../..#..")


def test_maze_bad_sizes():
    with pytest.raises(InvalidParameterError):
        make_grid_maze(2, 5)
    with pytest.raises(InvalidLayoutError):
        make_grid_maze(4, 3, "..../...")


def test_maze_seed_determinism():
    a = make_grid_maze(seed=7).reset()
    b = make_grid_maze(seed=7).reset()
    assert a == b


def test_maze_uniform_starts_cover_every_cell():
    env = make_grid_maze(seed=3)
    counts = np.zeros(env.n_states)
    for _ in range(10_000):
        s, g = env.reset()
        assert s != g
        counts[s] += 1
    assert (counts > 0).all()
    expected = 10_000 / env.n_states
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 43 degrees of freedom; 99.9th percentile is about 79
    assert chi2 < 79


def test_maze_walls_block_moves():
    env = make_grid_maze()
    s = env.state_of((0, 2))
    assert env.transition(s, 3) == s  # right into the wall
    assert env.cell(env.transition(s, 1)) == (1, 2)
    assert achieved_goal(env, env.state_of((3, 4))) == env.state_of((3, 4))
    assert env.achieved_goal((3, 4)) == (3, 4)


# pusher --------------------------------------------------------------------

def test_pusher_zero_action_keeps_state():
    env = make_point_pusher()
    s = np.array([0.1, 0.2, 0.5, 0.5])
    np.testing.assert_array_equal(env.transition(s, env.action_of(0, 0)), s)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 8))
def test_pusher_far_hand_leaves_puck(a):
    env = make_point_pusher()
    s = np.array([0.05, 0.05, 0.8, 0.8])
    np.testing.assert_array_equal(env.transition(s, a)[2:], s[2:])


def test_pusher_scripted_push_reaches_goal():
    env = make_point_pusher()
    start = np.array([0.2, 0.5, 0.3, 0.5])
    goal = np.array([0.75, 0.5])
    env.reset(task=(start, goal))
    r = 0
    for _ in range(20):
        _, r, done = env.step(env.action_of(1, 0))
        if done:
            break
    assert r == 1


def test_pusher_tolerance_is_strict():
    env = make_point_pusher(tolerance=0.1)
    s = np.array([0.0, 0.0, 0.5, 0.5])
    assert reward_predicate(env, s, np.array([0.5, 0.5 + 0.1 + 1e-9])) == 0
    assert reward_predicate(env, s, np.array([0.5, 0.5 + 0.0999])) == 1


def test_pusher_achieved_goal_is_puck():
    env = make_point_pusher()
    np.testing.assert_array_equal(achieved_goal(env, np.array([0.1, 0.2, 0.5, 0.5])), [0.5, 0.5])


def test_pusher_rejects_nonpositive_params():
    for kw in ({"tolerance": 0}, {"step_size": -1}, {"table_extent": 0}):
        with pytest.raises(InvalidParameterError):
            make_point_pusher(**kw)


def test_pusher_has_no_enumerable_model():
    from pairrl.envs import require_discrete

    with pytest.raises(UnsupportedEnvError):
        require_discrete(make_point_pusher())


# shared properties ---------------------------------------------------------

ENVS = [("chain", {"D": 6}), ("maze", {}), ("pusher", {})]


@pytest.mark.parametrize("env_id,params", ENVS)
def test_same_seed_and_actions_give_same_trajectory(env_id, params):
    trajs = []
    for _ in range(2):
        env = make_env(env_id, params, seed=11)
        s, g = env.reset()
        acts = np.random.default_rng(5).integers(0, env.n_actions, size=env.horizon)
        states = [s]
        for a in acts:
            ns, r, done = env.step(int(a))
            states.append(ns)
            if done:
                break
        trajs.append(np.asarray(states, dtype=float))
    np.testing.assert_array_equal(trajs[0], trajs[1])


@pytest.mark.parametrize("env_id,params", ENVS)
def test_reward_of_own_achieved_goal_is_one(env_id, params):
    env = make_env(env_id, params, seed=2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        s, _ = env.sample_task(rng)
        assert reward_predicate(env, s, achieved_goal(env, s)) == 1
        for a in range(env.n_actions):
            ns = env.transition(s, a)
            assert reward_predicate(env, ns, achieved_goal(env, ns)) == 1


@pytest.mark.parametrize("env_id,params", ENVS)
def test_reward_is_binary_and_flag_consistent(env_id, params):
    env = make_env(env_id, params, seed=4)
    rng = np.random.default_rng(1)
    for _ in range(20):
        s, g = env.reset()
        done = False
        while not done:
            ns, r, done = env.step(int(rng.integers(env.n_actions)))
            assert r in (0, 1)
            assert r == reward_predicate(env, ns, g)


def test_unknown_env_id():
    with pytest.raises(UnsupportedEnvError):
        make_env("hopper")


def test_trajectory_record_round_trip():
    t = Trajectory(3, [0, 1, 2, 3], [1, 1, 1], [0, 0, 1], True)
    back = Trajectory.from_record(t.to_record())
    assert back.states == t.states and back.goal == 3 and back.success
    trs = t.transitions
    assert all(trs[i].next_state == trs[i + 1].state for i in range(len(trs) - 1))
    assert trs[-1].done and trs[-1].env_reward == 1
