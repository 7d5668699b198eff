"""Compare the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time for each backend
and the speedup. Inputs are sized like a desk-scale run: a 4096-step GAE
buffer, the 7x7 U-maze transition table, and a D=64 chain for the
tabular rollout / commit kernels.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from pairrl import kernels
from pairrl.envs import ChainMdp, make_grid_maze


def cases(rng):
    n = 4096
    rewards = (rng.random(n) < 0.05).astype(np.float64)
    values = rng.random(n)
    next_values = rng.random(n)
    ends = np.zeros(n, np.uint8)
    ends[rng.choice(n, 80, replace=False)] = 1
    maze = make_grid_maze()
    chain = ChainMdp(64)
    S = chain.n_states
    table = np.full((S, S), -1, np.int64)
    for s in range(chain.D):
        table[s, s + 1:chain.D + 1] = 1
    starts = np.repeat(np.arange(S), S)
    goals = np.tile(np.arange(S), S)
    uniforms = rng.random((len(starts), S))
    lengths, _, st, ac = kernels.rollout_tabular(table, chain.next_table, chain.goal_of_state,
                                                 starts, goals, uniforms, S)

    def commit(impl):
        a = np.full((S, S), -1, np.int64)
        stored = np.full((S, S), np.iinfo(np.int64).max, np.int64)
        kernels.commit_demos(a, stored, st, ac, lengths, goals, impl=impl)

    return {
        "gae (4096 steps)": lambda impl: kernels.gae(rewards, values, next_values, ends, ends, 0.99, 0.95, impl=impl),
        "bfs_all_pairs (U-maze)": lambda impl: kernels.bfs_all_pairs(maze.next_table, impl=impl),
        "greedy_reach (chain D=64)": lambda impl: kernels.greedy_reach(table, chain.next_table, chain.goal_of_state,
                                                                        S, impl=impl),
        "rollout_tabular (chain D=64)": lambda impl: kernels.rollout_tabular(
            table, chain.next_table, chain.goal_of_state, starts, goals, uniforms, S, impl=impl),
        "commit_demos (chain D=64)": commit,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; only the Python backend is available")
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name in impls) + "     speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = {}
        for name, impl in impls.items():
            times[name] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        row = f"{label:32s}" + "".join(f"{t * 1e3:12.2f}ms" for t in times.values())
        if "cython" in times:
            row += f"  {times['python'] / times['cython']:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
