import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def bfs_oracle(next_table, s):
    """Plain queue BFS over a transition table; None marks unreachable."""
    from collections import deque

    n = len(next_table)
    dist = [None] * n
    dist[s] = 0
    q = deque([s])
    while q:
        u = q.popleft()
        for v in next_table[u]:
            v = int(v)
            if dist[v] is None:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def gae_oracle(rewards, values, next_values, terminal, episode_end, gamma, lam):
    """Direct double-sum definition: A_t = sum_k (gamma*lam)^k delta_{t+k} within the episode."""
    n = len(rewards)
    deltas = [rewards[t] + gamma * next_values[t] * (1 - terminal[t]) - values[t] for t in range(n)]
    out = []
    for t in range(n):
        acc, k = 0.0, 0
        while True:
            acc += (gamma * lam) ** k * deltas[t + k]
            if episode_end[t + k] or terminal[t + k] or t + k + 1 >= n:
                break
            k += 1
        out.append(acc)
    return np.array(out)


ACCEPTANCE: dict = {}


def record_criterion(n, ok: bool, detail: str) -> str:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
