import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bfs_oracle, gae_oracle
from pairrl import kernels
from pairrl.envs import ChainMdp, make_grid_maze

IMPLS = kernels.backends()
UNSET = np.iinfo(np.int64).max


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in IMPLS


@st.composite
def episode_buffers(draw):
    n = draw(st.integers(1, 40))
    floats = st.floats(-2, 2, allow_nan=False)
    r = np.array(draw(st.lists(st.sampled_from([0.0, 1.0]), min_size=n, max_size=n)))
    v = np.array(draw(st.lists(floats, min_size=n, max_size=n)))
    vn = np.array(draw(st.lists(floats, min_size=n, max_size=n)))
    term = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)), dtype=np.uint8)
    end = np.array(draw(st.lists(st.booleans(), min_size=n, max_size=n)), dtype=np.uint8)
    end |= term
    end[-1] = 1
    gamma = draw(st.floats(0.5, 1.0))
    lam = draw(st.floats(0.0, 1.0))
    return r, v, vn, term, end, gamma, lam


@settings(max_examples=60, deadline=None)
@given(episode_buffers())
def test_gae_matches_direct_sum(buf):
    want = gae_oracle(*buf)
    for impl in IMPLS.values():
        np.testing.assert_allclose(kernels.gae(*buf, impl=impl), want, atol=1e-10)


def test_gae_three_step_hand_recursion():
    r = np.array([0.0, 0.0, 1.0])
    v = np.array([0.2, 0.4, 0.7])
    vn = np.array([0.4, 0.7, 0.0])
    term = np.array([0, 0, 1], np.uint8)
    gamma, lam = 0.99, 0.95
    d2 = 1.0 - 0.7
    d1 = 0.0 + gamma * 0.7 - 0.4
    d0 = 0.0 + gamma * 0.4 - 0.2
    want = [d0 + gamma * lam * (d1 + gamma * lam * d2), d1 + gamma * lam * d2, d2]
    np.testing.assert_allclose(kernels.gae(r, v, vn, term, term, gamma, lam), want, atol=1e-12)


@st.composite
def random_tables(draw):
    n = draw(st.integers(1, 12))
    k = draw(st.integers(1, 4))
    flat = draw(st.lists(st.integers(0, n - 1), min_size=n * k, max_size=n * k))
    return np.array(flat, dtype=np.int64).reshape(n, k)


@settings(max_examples=60, deadline=None)
@given(random_tables())
def test_bfs_matches_queue_oracle(table):
    for impl in IMPLS.values():
        dist = kernels.bfs_all_pairs(table, impl=impl)
        for s in range(len(table)):
            want = [-1 if d is None else d for d in bfs_oracle(table, s)]
            assert list(dist[s]) == want


@settings(max_examples=60, deadline=None)
@given(random_tables(), st.data())
def test_tabular_kernels_agree_across_backends(table, data):
    n, k = table.shape
    acts = np.array(data.draw(st.lists(st.integers(-1, k - 1), min_size=n * n, max_size=n * n))).reshape(n, n)
    gos = np.arange(n)
    m = data.draw(st.integers(1, 10))
    starts = np.array(data.draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m)))
    goals = np.array(data.draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m)))
    uni = np.random.default_rng(data.draw(st.integers(0, 99))).random((m, n))
    outs = {}
    for name, impl in IMPLS.items():
        reach = kernels.greedy_reach(acts, table, gos, n, impl=impl)
        roll = kernels.rollout_tabular(acts, table, gos, starts, goals, uni, n, impl=impl)
        a = np.full((n, n), -1, np.int64)
        stored = np.full((n, n), UNSET, np.int64)
        w = kernels.commit_demos(a, stored, roll[2], roll[3], roll[0], goals, impl=impl)
        outs[name] = (reach, *roll, a, stored, w)
    ref = outs["python"]
    for got in outs.values():
        for x, y in zip(got, ref):
            np.testing.assert_array_equal(x, y)


def test_greedy_reach_oracle_chain():
    env = ChainMdp(5)
    table = np.full((7, 7), -1, np.int64)
    table[:5, :] = 1
    steps = kernels.greedy_reach(table, env.next_table, env.goal_of_state, 7)
    assert steps[0, 5] == 5
    assert steps[2, 4] == 2
    assert steps[6, 0] == -1  # dead state never leaves
    assert steps[3, 3] == 0


def test_rollout_follows_uniforms_on_unresolved_entries():
    env = ChainMdp(3)
    table = np.full((5, 5), -1, np.int64)
    u = np.array([[0.9, 0.9, 0.9, 0.1, 0.1]])
    lengths, ok, states, actions = kernels.rollout_tabular(table, env.next_table, env.goal_of_state,
                                                           [0], [3], u, 5)
    assert ok[0] == 1 and lengths[0] == 3
    assert list(actions[0, :3]) == [1, 1, 1]
    assert list(states[0, :4]) == [0, 1, 2, 3]


def test_commit_keeps_shortest_remaining_length():
    n = 4
    a = np.full((n, n), -1, np.int64)
    stored = np.full((n, n), UNSET, np.int64)
    # demo 1 revisits state 0: 0 -> 1 -> 0 -> 2 (goal 2); last visit of 0 has 1 step left
    kernels.commit_demos(a, stored, np.array([[0, 1, 0, 2]]), np.array([[5, 6, 7]]), np.array([3]), np.array([2]))
    assert stored[0, 2] == 1 and a[0, 2] == 7
    assert stored[1, 2] == 2 and a[1, 2] == 6
    # an equally long demo leaves the entry alone, a shorter one replaces it
    kernels.commit_demos(a, stored, np.array([[1, 3, 2]]), np.array([[1, 1]]), np.array([2]), np.array([2]))
    assert a[1, 2] == 6
    kernels.commit_demos(a, stored, np.array([[1, 2]]), np.array([[3]]), np.array([1]), np.array([2]))
    assert a[1, 2] == 3 and stored[1, 2] == 1


def test_commit_rejects_non_contiguous_tables():
    big = np.full((4, 8), -1, np.int64)
    with pytest.raises(TypeError):
        kernels.commit_demos(big[:, ::2], np.zeros((4, 4), np.int64), np.zeros((1, 2), np.int64),
                             np.zeros((1, 1), np.int64), np.array([1]), np.array([0]))


def test_bfs_on_maze_is_symmetric():
    env = make_grid_maze()
    d = kernels.bfs_all_pairs(env.next_table)
    np.testing.assert_array_equal(d, d.T)
