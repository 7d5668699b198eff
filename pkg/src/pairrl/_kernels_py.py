"""Pure-Python/numpy reference versions of the hot kernels.

These mirror ``_kernels.pyx`` exactly (same inputs, same outputs, same
consumption of the supplied random numbers) and are used when the compiled
extension is unavailable or ``PAIRRL_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

from collections import deque

import numpy as np


def gae(rewards, values, next_values, terminal, episode_end, gamma, lam):
    n = len(rewards)
    adv = np.zeros(n, dtype=np.float64)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if episode_end[t]:
            running = 0.0
        boot = 0.0 if terminal[t] else next_values[t]
        delta = rewards[t] + gamma * boot - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv


def bfs_all_pairs(next_table):
    next_table = np.asarray(next_table, dtype=np.int64)
    n_states, n_actions = next_table.shape
    dist = np.full((n_states, n_states), -1, dtype=np.int64)
    for src in range(n_states):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            s = queue.popleft()
            d = dist[src, s] + 1
            for a in range(n_actions):
                nxt = next_table[s, a]
                if dist[src, nxt] < 0:
                    dist[src, nxt] = d
                    queue.append(nxt)
    return dist


def greedy_reach(action_table, next_table, goal_of_state, max_steps):
    """Steps needed by a deterministic table policy for every (state, goal).

    ``action_table[s, g] == -1`` marks an unresolved entry; a rollout that
    hits one fails. Returns -1 where the goal is not reached in ``max_steps``.
    """
    action_table = np.asarray(action_table, dtype=np.int64)
    next_table = np.asarray(next_table, dtype=np.int64)
    goal_of_state = np.asarray(goal_of_state, dtype=np.int64)
    n_states, n_goals = action_table.shape
    out = np.full((n_states, n_goals), -1, dtype=np.int64)
    for g in range(n_goals):
        for s0 in range(n_states):
            s = s0
            for t in range(max_steps + 1):
                if goal_of_state[s] == g:
                    out[s0, g] = t
                    break
                if t == max_steps:
                    break
                a = action_table[s, g]
                if a < 0:
                    break
                s = next_table[s, a]
    return out


def rollout_tabular(action_table, next_table, goal_of_state, starts, goals, uniforms, max_steps):
    """Batch of rollouts; unresolved entries draw a uniform action from ``uniforms``."""
    action_table = np.asarray(action_table, dtype=np.int64)
    next_table = np.asarray(next_table, dtype=np.int64)
    goal_of_state = np.asarray(goal_of_state, dtype=np.int64)
    n_actions = next_table.shape[1]
    n = len(starts)
    lengths = np.zeros(n, dtype=np.int64)
    success = np.zeros(n, dtype=np.uint8)
    states = np.full((n, max_steps + 1), -1, dtype=np.int64)
    actions = np.full((n, max_steps), -1, dtype=np.int64)
    for i in range(n):
        s = int(starts[i])
        g = int(goals[i])
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
                a = int(uniforms[i, t] * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            actions[i, t] = a
            s = next_table[s, a]
            t += 1
            states[i, t] = s
        lengths[i] = t
    return lengths, success, states, actions


def commit_demos(action_table, stored, states, actions, lengths, goals):
    """Write demonstrations into a deterministic table policy, in place.

    For each demo (in order) and each state's last visit, the entry
    ``(s, goal)`` is overwritten when the demo's remaining length from that
    visit is strictly shorter than ``stored[s, goal]``. Returns the number
    of entries written.
    """
    n_states = action_table.shape[0]
    stamp = np.full(n_states, -1, dtype=np.int64)
    written = 0
    for i in range(len(lengths)):
        T = int(lengths[i])
        g = int(goals[i])
        for t in range(T - 1, -1, -1):
            s = int(states[i, t])
            if stamp[s] == i:
                continue
            stamp[s] = i
            rem = T - t
            if rem < stored[s, g]:
                stored[s, g] = rem
                action_table[s, g] = actions[i, t]
                written += 1
    return written
