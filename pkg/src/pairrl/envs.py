"""Goal-conditioned MDPs with 0/1 sparse rewards.

Three built-in environments:

* ``chain``  - the (D+2)-state hard instance: action 1 advances, action 0
  drops into an absorbing dead state.
* ``maze``   - a 4-connected grid maze given as an ASCII layout.
* ``pusher`` - a continuous 2-D point pusher with 3x3 discretized hand motion.

Discrete environments index states by integers and use the state set as
goal space, so ``achieved_goal`` is the identity. They also expose a
``next_table`` (states x actions) for exact reachability analysis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from . import kernels
from .errors import (
    EpisodeFinishedError,
    InvalidActionError,
    InvalidLayoutError,
    InvalidParameterError,
    InvalidTaskError,
    UnsupportedEnvError,
)

ROLLOUT = "rollout"
RELABELED = "relabeled"
REDUCED = "reduced"
PROVENANCES = (ROLLOUT, RELABELED, REDUCED)


@dataclass
class Transition:
    state: Any
    action: int
    next_state: Any
    env_reward: int
    shaped_reward: float = 0.0
    done: bool = False


@dataclass
class Trajectory:
    """A goal-tagged episode.

    ``states`` has one more entry than ``actions``; transition t goes from
    ``states[t]`` to ``states[t + 1]``, so the chaining invariant holds by
    construction.
    """

    goal: Any
    states: list
    actions: list
    env_rewards: list
    success: bool
    provenance: str = ROLLOUT
    shaped_rewards: list | None = None
    truncated: bool = False
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def transitions(self) -> list[Transition]:
        shaped = self.shaped_rewards or [0.0] * len(self.actions)
        n = len(self.actions)
        out = []
        for t in range(n):
            done = bool(self.env_rewards[t]) or (t == n - 1 and not self.truncated)
            out.append(Transition(self.states[t], int(self.actions[t]), self.states[t + 1],
                                  int(self.env_rewards[t]), float(shaped[t]), done))
        return out

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    @property
    def start(self):
        return self.states[0]

    @property
    def final_state(self):
        return self.states[-1]

    def to_record(self) -> dict:
        """JSON-friendly dict (numpy arrays become lists)."""
        return {
            "goal": _plain(self.goal),
            "states": [_plain(s) for s in self.states],
            "actions": [int(a) for a in self.actions],
            "env_rewards": [int(r) for r in self.env_rewards],
            "success": bool(self.success),
            "provenance": self.provenance,
            "truncated": bool(self.truncated),
        }

    @classmethod
    def from_record(cls, rec: dict, continuous: bool = False) -> "Trajectory":
        conv = (lambda x: np.asarray(x, dtype=np.float64)) if continuous else int
        return cls(
            goal=conv(rec["goal"]),
            states=[conv(s) for s in rec["states"]],
            actions=[int(a) for a in rec["actions"]],
            env_rewards=[int(r) for r in rec["env_rewards"]],
            success=bool(rec["success"]),
            provenance=rec.get("provenance", ROLLOUT),
            truncated=bool(rec.get("truncated", False)),
        )


def _plain(x):
    if isinstance(x, np.ndarray):
        return [float(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


class GoalMdp:
    """Base class. Subclasses implement ``transition``, ``reward``,
    ``achieved_goal``, ``sample_task`` and ``encode``."""

    env_id = "base"
    discrete = True
    supports_injection = True
    n_actions: int
    horizon: int
    success_tolerance = 0.0

    def __init__(self, seed=None):
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.goal = None
        self.t = 0
        self.done = True

    # episode control -------------------------------------------------------

    def reset(self, task=None, seed=None):
        """Start an episode; returns ``(state, goal)``.

        ``task`` fixes ``(start, goal)`` (state injection); otherwise both are
        drawn from the default start/goal distribution.
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if task is None:
            start, goal = self.sample_task(self.rng)
        else:
            start, goal = task
            self.validate_task(start, goal)
        self.state = self._copy_state(start)
        self.goal = self._copy_goal(goal)
        self.t = 0
        self.done = False
        return self._copy_state(self.state), self._copy_goal(self.goal)

    def step(self, action):
        """Advance one step; returns ``(next_state, env_reward, done)``."""
        if self.done:
            raise EpisodeFinishedError("step() called on a finished episode; call reset()")
        if not (isinstance(action, (int, np.integer)) and 0 <= action < self.n_actions):
            raise InvalidActionError(f"action {action!r} not in [0, {self.n_actions})")
        self.state = self.transition(self.state, int(action))
        self.t += 1
        r = self.reward(self.state, self.goal)
        self.done = bool(r) or self.t >= self.horizon
        return self._copy_state(self.state), r, self.done

    # model -----------------------------------------------------------------

    def transition(self, state, action):
        raise NotImplementedError

    def reward(self, state, goal) -> int:
        raise NotImplementedError

    def achieved_goal(self, state):
        raise NotImplementedError

    def sample_task(self, rng):
        raise NotImplementedError

    def validate_task(self, start, goal):
        raise NotImplementedError

    def hard_task(self):
        raise NotImplementedError

    def encode(self, states, goals) -> np.ndarray:
        """Network input features for a batch of (state, goal) pairs."""
        raise NotImplementedError

    @property
    def input_dim(self) -> int:
        raise NotImplementedError

    def _copy_state(self, s):
        return s

    def _copy_goal(self, g):
        return g

    def spawn(self, seed=None) -> "GoalMdp":
        """Independent instance with identical parameters."""
        raise NotImplementedError


class DiscreteGoalMdp(GoalMdp):
    """Finite state set, goal space = state set, deterministic transitions."""

    n_states: int
    next_table: np.ndarray

    @property
    def n_goals(self) -> int:
        return self.n_states

    def transition(self, state, action):
        return int(self.next_table[state, action])

    def reward(self, state, goal) -> int:
        return int(int(state) == int(goal))

    def achieved_goal(self, state):
        return state

    @property
    def goal_of_state(self) -> np.ndarray:
        return np.arange(self.n_states, dtype=np.int64)

    def validate_task(self, start, goal):
        if not (0 <= int(start) < self.n_states and 0 <= int(goal) < self.n_states):
            raise InvalidTaskError(f"task ({start}, {goal}) outside state space of size {self.n_states}")
        if int(start) == int(goal):
            raise InvalidTaskError("start and goal must differ")

    def sample_task(self, rng):
        start = int(rng.integers(self.n_states))
        goal = int(rng.integers(self.n_states - 1))
        if goal >= start:
            goal += 1
        return start, goal

    def encode(self, states, goals) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64).reshape(-1)
        goals = np.asarray(goals, dtype=np.int64).reshape(-1)
        x = np.zeros((len(states), 2 * self.n_states))
        rows = np.arange(len(states))
        x[rows, states] = 1.0
        x[rows, self.n_states + goals] = 1.0
        return x

    @property
    def input_dim(self) -> int:
        return 2 * self.n_states

    def distances(self) -> np.ndarray:
        """All-pairs BFS distances, -1 where unreachable."""
        return kernels.bfs_all_pairs(self.next_table)


class ChainMdp(DiscreteGoalMdp):
    """States s_0..s_D plus the absorbing dead state s_{D+1}.

    Action 1 moves s_i -> s_{i+1} (s_D -> s_{D+1}); action 0 moves any state
    to s_{D+1}. Reward is 1 only on the goal state; s_{D+1} earns nothing.
    """

    env_id = "chain"

    def __init__(self, D: int, horizon: int | None = None, seed=None):
        if int(D) < 1:
            raise InvalidParameterError(f"chain length D must be >= 1, got {D}")
        super().__init__(seed)
        self.D = int(D)
        self.n_states = self.D + 2
        self.n_actions = 2
        self.horizon = int(horizon) if horizon is not None else self.D + 2
        self.dead = self.D + 1
        table = np.empty((self.n_states, 2), dtype=np.int64)
        table[:, 0] = self.dead
        table[:, 1] = np.minimum(np.arange(self.n_states) + 1, self.dead)
        self.next_table = table

    def hard_task(self):
        return 0, self.D

    def params(self) -> dict:
        return {"D": self.D, "horizon": self.horizon}

    def spawn(self, seed=None):
        return ChainMdp(self.D, self.horizon, seed)


MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))  # up, down, left, right, stay


def u_maze_layout(width: int = 7, height: int = 7, wall_height: int = 5) -> list[str]:
    """Open grid with a wall column hanging from the top edge in the middle."""
    col = width // 2
    rows = []
    for r in range(height):
        rows.append("".join("#" if (c == col and r < wall_height) else "." for c in range(width)))
    return rows


class GridMaze(DiscreteGoalMdp):
    """4-connected grid maze; states are free cells in row-major order.

    Actions: 0 up, 1 down, 2 left, 3 right, 4 stay. Moves into walls or off
    the grid leave the agent in place.
    """

    env_id = "maze"

    def __init__(self, layout, horizon: int | None = None, seed=None):
        super().__init__(seed)
        rows = [r.strip() for r in layout if r.strip()]
        self.height = len(rows)
        self.width = len(rows[0]) if rows else 0
        if self.width < 3 or self.height < 3:
            raise InvalidParameterError("maze width and height must be >= 3")
        if any(len(r) != self.width for r in rows):
            raise InvalidLayoutError("layout rows have unequal lengths")
        if any(ch not in "#." for r in rows for ch in r):
            raise InvalidLayoutError("layout may only contain '#' and '.'")
        self.layout = rows
        self.cells = [(r, c) for r in range(self.height) for c in range(self.width) if rows[r][c] == "."]
        if len(self.cells) < 2:
            raise InvalidLayoutError("maze needs at least two free cells")
        self.index = {cell: i for i, cell in enumerate(self.cells)}
        self.n_states = len(self.cells)
        self.n_actions = len(MOVES)
        table = np.empty((self.n_states, self.n_actions), dtype=np.int64)
        for i, (r, c) in enumerate(self.cells):
            for a, (dr, dc) in enumerate(MOVES):
                table[i, a] = self.index.get((r + dr, c + dc), i)
        self.next_table = table
        dist = self.distances()
        if (dist < 0).any():
            raise InvalidLayoutError("free cells are not connected")
        self.diameter = int(dist.max())
        flat = int(np.argmax(dist))  # first maximum in row-major order
        self._hard = divmod(flat, self.n_states)
        self.horizon = int(horizon) if horizon is not None else self.diameter + 2

    def hard_task(self):
        return self._hard

    def cell(self, state: int) -> tuple[int, int]:
        return self.cells[int(state)]

    def state_of(self, cell) -> int:
        try:
            return self.index[tuple(cell)]
        except KeyError:
            raise InvalidTaskError(f"cell {cell} is not a free cell") from None

    def achieved_goal(self, state):
        # tuple input is accepted as a cell for convenience
        return tuple(state) if isinstance(state, tuple) else state

    def params(self) -> dict:
        return {"layout": "/".join(self.layout), "horizon": self.horizon}

    def spawn(self, seed=None):
        return GridMaze(self.layout, self.horizon, seed)


def make_chain_mdp(D: int, horizon: int | None = None, seed=None) -> ChainMdp:
    return ChainMdp(D, horizon, seed)


def make_grid_maze(width: int = 7, height: int = 7, wall_layout=None, horizon=None, seed=None) -> GridMaze:
    """Build a maze from an ASCII layout (rows of '#'/'.').

    ``wall_layout`` may be a list of rows, a '/'- or newline-separated string,
    or None for the default U-maze of the given size.
    """
    if width < 3 or height < 3:
        raise InvalidParameterError("maze width and height must be >= 3")
    if wall_layout is None:
        rows = u_maze_layout(width, height)
    elif isinstance(wall_layout, str):
        rows = [r for r in wall_layout.replace("/", "\n").splitlines() if r.strip()]
    else:
        rows = list(wall_layout)
    if len(rows) != height or any(len(r.strip()) != width for r in rows):
        raise InvalidLayoutError(f"layout is not {width}x{height}")
    return GridMaze(rows, horizon, seed)


class PointPusher(GoalMdp):
    """Continuous table-top pushing with 9 discrete hand motions.

    State is ``(hand_x, hand_y, puck_x, puck_y)``; the goal is a puck
    position. If the moved hand ends within ``contact_radius`` of the puck,
    the puck is displaced by the same motion. Everything is clipped to
    ``[0, table_extent]^2``. Success needs puck-goal distance strictly below
    ``tolerance``.
    """

    env_id = "pusher"
    discrete = False

    def __init__(self, table_extent=1.0, step_size=0.1, tolerance=0.1, horizon=50,
                 contact_radius=None, seed=None):
        for name, v in (("table_extent", table_extent), ("step_size", step_size), ("tolerance", tolerance)):
            if not v > 0:
                raise InvalidParameterError(f"{name} must be positive, got {v}")
        if int(horizon) < 1:
            raise InvalidParameterError("horizon must be >= 1")
        super().__init__(seed)
        self.extent = float(table_extent)
        self.step_size = float(step_size)
        self.success_tolerance = float(tolerance)
        self.contact_radius = float(contact_radius) if contact_radius is not None else 1.5 * self.step_size
        self.horizon = int(horizon)
        self.n_actions = 9
        self.moves = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=np.float64)

    def action_of(self, dx: int, dy: int) -> int:
        return (dx + 1) * 3 + (dy + 1)

    def transition(self, state, action):
        s = np.asarray(state, dtype=np.float64)
        d = self.moves[action] * self.step_size
        hand = np.clip(s[:2] + d, 0.0, self.extent)
        puck = s[2:4]
        if d.any() and np.hypot(*(hand - puck)) < self.contact_radius:
            puck = np.clip(puck + d, 0.0, self.extent)
        return np.concatenate([hand, puck])

    def achieved_goal(self, state):
        return np.asarray(state, dtype=np.float64)[2:4].copy()

    def reward(self, state, goal) -> int:
        dist = float(np.hypot(*(self.achieved_goal(state) - np.asarray(goal, dtype=np.float64))))
        return int(dist < self.success_tolerance)

    def validate_task(self, start, goal):
        start = np.asarray(start, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        if start.shape != (4,) or goal.shape != (2,):
            raise InvalidTaskError("pusher task needs a 4-d start state and a 2-d goal")
        for v in (start, goal):
            if (v < 0).any() or (v > self.extent).any():
                raise InvalidTaskError("task outside the table")
        if self.reward(start, goal):
            raise InvalidTaskError("start already satisfies the goal")

    def sample_task(self, rng):
        while True:
            start = rng.uniform(0.0, self.extent, size=4)
            goal = rng.uniform(0.0, self.extent, size=2)
            if not self.reward(start, goal):
                return start, goal

    def hard_task(self):
        e = self.extent
        return np.array([0.95 * e, 0.5 * e, 0.75 * e, 0.5 * e]), np.array([0.2 * e, 0.2 * e])

    def encode(self, states, goals) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64).reshape(-1, 4)
        goals = np.asarray(goals, dtype=np.float64).reshape(-1, 2)
        return np.concatenate([states, goals], axis=1) / self.extent

    @property
    def input_dim(self) -> int:
        return 6

    def goal_grid(self, n_per_side: int) -> np.ndarray:
        ticks = (np.arange(n_per_side) + 0.5) / n_per_side * self.extent
        gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def _copy_state(self, s):
        return np.array(s, dtype=np.float64)

    def _copy_goal(self, g):
        return np.array(g, dtype=np.float64)

    def params(self) -> dict:
        return {"table_extent": self.extent, "step_size": self.step_size,
                "tolerance": self.success_tolerance, "horizon": self.horizon}

    def spawn(self, seed=None):
        return PointPusher(self.extent, self.step_size, self.success_tolerance, self.horizon,
                           self.contact_radius, seed)


def make_point_pusher(table_extent=1.0, step_size=0.1, tolerance=0.1, horizon=50, seed=None) -> PointPusher:
    return PointPusher(table_extent, step_size, tolerance, horizon, seed=seed)


def env_reset(env: GoalMdp, task=None, rng_seed=None):
    return env.reset(task=task, seed=rng_seed)


def env_step(env: GoalMdp, action):
    return env.step(action)


def reward_predicate(env: GoalMdp, state, goal) -> int:
    return env.reward(state, goal)


def achieved_goal(env: GoalMdp, state):
    return env.achieved_goal(state)


def _int_or_none(v):
    return None if v is None else int(v)


ENV_BUILDERS: dict[str, Callable[..., GoalMdp]] = {
    "chain": lambda D=8, horizon=None, seed=None: ChainMdp(int(D), _int_or_none(horizon), seed),
    "maze": lambda width=7, height=7, layout=None, horizon=None, seed=None: make_grid_maze(
        int(width), int(height), layout, _int_or_none(horizon), seed),
    "pusher": lambda table_extent=1.0, step_size=0.1, tolerance=0.1, horizon=50, seed=None: PointPusher(
        float(table_extent), float(step_size), float(tolerance), int(horizon), seed=seed),
}


def make_env(env_id: str, params: dict | None = None, seed=None) -> GoalMdp:
    """Construct a built-in environment from its string id and parameters."""
    try:
        builder = ENV_BUILDERS[env_id]
    except KeyError:
        raise UnsupportedEnvError(f"unknown env id {env_id!r}; known: {sorted(ENV_BUILDERS)}") from None
    return builder(**dict(params or {}), seed=seed)


def require_discrete(env: GoalMdp) -> DiscreteGoalMdp:
    if not isinstance(env, DiscreteGoalMdp):
        raise UnsupportedEnvError(f"{type(env).__name__} has no enumerable transition model")
    return env


__all__ = [
    "ChainMdp", "DiscreteGoalMdp", "GoalMdp", "GridMaze", "PointPusher", "Trajectory", "Transition",
    "ROLLOUT", "RELABELED", "REDUCED", "PROVENANCES", "achieved_goal", "env_reset", "env_step",
    "make_chain_mdp", "make_env", "make_grid_maze", "make_point_pusher", "require_discrete",
    "reward_predicate", "u_maze_layout",
]
