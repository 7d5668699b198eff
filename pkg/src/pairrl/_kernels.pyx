# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels. Semantics match ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


def gae(double[::1] rewards, double[::1] values, double[::1] next_values,
        const unsigned char[::1] terminal, const unsigned char[::1] episode_end,
        double gamma, double lam):
    cdef Py_ssize_t n = rewards.shape[0]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] adv = out
    cdef double running = 0.0
    cdef double boot, delta
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        if episode_end[t]:
            running = 0.0
        boot = 0.0 if terminal[t] else next_values[t]
        delta = rewards[t] + gamma * boot - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return out


def bfs_all_pairs(cnp.int64_t[:, ::1] next_table):
    cdef Py_ssize_t n_states = next_table.shape[0]
    cdef Py_ssize_t n_actions = next_table.shape[1]
    out = np.full((n_states, n_states), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] dist = out
    cdef cnp.int64_t *queue = <cnp.int64_t *> malloc(n_states * sizeof(cnp.int64_t))
    cdef Py_ssize_t head, tail, src, a
    cdef cnp.int64_t s, nxt, d
    try:
        for src in range(n_states):
            dist[src, src] = 0
            head = 0
            tail = 0
            queue[tail] = src
            tail += 1
            while head < tail:
                s = queue[head]
                head += 1
                d = dist[src, s] + 1
                for a in range(n_actions):
                    nxt = next_table[s, a]
                    if dist[src, nxt] < 0:
                        dist[src, nxt] = d
                        queue[tail] = nxt
                        tail += 1
    finally:
        free(queue)
    return out


def greedy_reach(cnp.int64_t[:, ::1] action_table, cnp.int64_t[:, ::1] next_table,
                 cnp.int64_t[::1] goal_of_state, Py_ssize_t max_steps):
    cdef Py_ssize_t n_states = action_table.shape[0]
    cdef Py_ssize_t n_goals = action_table.shape[1]
    out = np.full((n_states, n_goals), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] res = out
    cdef Py_ssize_t g, s0, t
    cdef cnp.int64_t s, a
    for g in range(n_goals):
        for s0 in range(n_states):
            s = s0
            for t in range(max_steps + 1):
                if goal_of_state[s] == g:
                    res[s0, g] = t
                    break
                if t == max_steps:
                    break
                a = action_table[s, g]
                if a < 0:
                    break
                s = next_table[s, a]
    return out


def rollout_tabular(cnp.int64_t[:, ::1] action_table, cnp.int64_t[:, ::1] next_table,
                    cnp.int64_t[::1] goal_of_state, cnp.int64_t[::1] starts,
                    cnp.int64_t[::1] goals, double[:, ::1] uniforms, Py_ssize_t max_steps):
    cdef Py_ssize_t n_actions = next_table.shape[1]
    cdef Py_ssize_t n = starts.shape[0]
    lengths_arr = np.zeros(n, dtype=np.int64)
    success_arr = np.zeros(n, dtype=np.uint8)
    states_arr = np.full((n, max_steps + 1), -1, dtype=np.int64)
    actions_arr = np.full((n, max_steps), -1, dtype=np.int64)
    cdef cnp.int64_t[::1] lengths = lengths_arr
    cdef unsigned char[::1] success = success_arr
    cdef cnp.int64_t[:, ::1] states = states_arr
    cdef cnp.int64_t[:, ::1] actions = actions_arr
    cdef Py_ssize_t i, t
    cdef cnp.int64_t s, g, a
    for i in range(n):
        s = starts[i]
        g = goals[i]
        states[i, 0] = s
        t = 0
        while True:
            if goal_of_state[s] == g:
                success[i] = 1
                break
            if t == max_steps:
                break
            a = action_table[s, g]
            if a < 0:
                a = <cnp.int64_t> (uniforms[i, t] * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            actions[i, t] = a
            s = next_table[s, a]
            t += 1
            states[i, t] = s
        lengths[i] = t
    return lengths_arr, success_arr, states_arr, actions_arr


def commit_demos(cnp.int64_t[:, ::1] action_table, cnp.int64_t[:, ::1] stored,
                 cnp.int64_t[:, ::1] states, cnp.int64_t[:, ::1] actions,
                 cnp.int64_t[::1] lengths, cnp.int64_t[::1] goals):
    cdef Py_ssize_t n_states = action_table.shape[0]
    stamp_arr = np.full(n_states, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] stamp = stamp_arr
    cdef Py_ssize_t i, t
    cdef cnp.int64_t T, g, s, rem
    cdef Py_ssize_t written = 0
    for i in range(lengths.shape[0]):
        T = lengths[i]
        g = goals[i]
        for t in range(T - 1, -1, -1):
            s = states[i, t]
            if stamp[s] == i:
                continue
            stamp[s] = i
            rem = T - t
            if rem < stored[s, g]:
                stored[s, g] = rem
                action_table[s, g] = actions[i, t]
                written += 1
    return written
