"""Hot-loop kernels with backend selection at import time.

The compiled ``_kernels`` extension is used when it was built; otherwise
(or when ``PAIRRL_PURE_PYTHON=1``) the numpy/Python reference versions in
``_kernels_py`` are used. Both take the same arguments; inputs are coerced
to contiguous arrays of the right dtype here so callers need not care.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_py = _kernels_py
_compiled = None
if os.environ.get("PAIRRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

_impl = _compiled if _compiled is not None else _py
BACKEND = "cython" if _compiled is not None else "python"


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def gae(rewards, values, next_values, terminal, episode_end, gamma, lam, impl=None):
    """Generalized advantage estimates over a flat buffer of concatenated episodes.

    ``terminal[t]`` zeroes the bootstrap value at step t; ``episode_end[t]``
    stops the backward recursion from leaking across episodes.
    """
    impl = impl or _impl
    return impl.gae(_f64(rewards), _f64(values), _f64(next_values),
                    _u8(terminal), _u8(episode_end), float(gamma), float(lam))


def bfs_all_pairs(next_table, impl=None):
    impl = impl or _impl
    return impl.bfs_all_pairs(_i64(next_table))


def greedy_reach(action_table, next_table, goal_of_state, max_steps, impl=None):
    impl = impl or _impl
    return impl.greedy_reach(_i64(action_table), _i64(next_table), _i64(goal_of_state), int(max_steps))


def rollout_tabular(action_table, next_table, goal_of_state, starts, goals, uniforms,
                    max_steps, impl=None):
    impl = impl or _impl
    return impl.rollout_tabular(_i64(action_table), _i64(next_table), _i64(goal_of_state),
                                _i64(starts), _i64(goals), _f64(uniforms), int(max_steps))


def backends():
    """Available kernel implementations, compiled first."""
    out = {}
    if _compiled is not None:
        out["cython"] = _compiled
    out["python"] = _py
    return out


def commit_demos(action_table, stored, states, actions, lengths, goals, impl=None):
    """In-place; ``action_table`` and ``stored`` must be C-contiguous int64."""
    impl = impl or _impl
    for name, arr in (("action_table", action_table), ("stored", stored)):
        if arr.dtype != np.int64 or not arr.flags.c_contiguous:
            raise TypeError(f"{name} must be a C-contiguous int64 array")
    return impl.commit_demos(action_table, stored, _i64(states), _i64(actions), _i64(lengths), _i64(goals))
