"""Tabular and small-MLP function approximators with exact gradients.

Parameters of every approximator live in one flat float64 vector; layer
weights and tables are views into it. That keeps Adam, checkpointing and
finite-difference checks trivial.

Heads
-----
``categorical``  logits over actions (policy).
``value``        scalar output, optionally squashed by a sigmoid.

Losses (see ``LOSSES``) are averaged over the minibatch:

* ``squared_error``     mean(mask * (v - target)^2), normalised by sum(mask)
* ``weighted_nll``      -mean(w * log pi(a))
* ``clipped_surrogate`` -mean(min(r A, clip(r, 1-eps, 1+eps) A)), r = pi/pi_old
* ``entropy``           -mean(H(pi))
"""
from __future__ import annotations

import io
import json
import os
import tempfile

import numpy as np

from .errors import NumericalFailureError, ShapeError, UnsupportedLossError

CATEGORICAL = "categorical"
VALUE = "value"
CHECKPOINT_VERSION = 1


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Approximator:
    """Policy or value function in tabular or MLP mode.

    Tabular mode indexes a dense table by integer ``(state, goal)`` ids and
    starts at zero. MLP mode takes a feature matrix (see ``GoalMdp.encode``)
    and uses tanh hidden layers.
    """

    def __init__(self, mode, head, *, n_actions=1, n_states=None, n_goals=None,
                 input_dim=None, hidden=(64, 64), squash=False, seed=0, out_scale=None):
        if mode not in ("tabular", "mlp"):
            raise ValueError(f"unknown approximator mode {mode!r}")
        if head not in (CATEGORICAL, VALUE):
            raise ValueError(f"unknown head {head!r}")
        self.mode = mode
        self.head = head
        self.n_actions = int(n_actions) if head == CATEGORICAL else 1
        self.squash = bool(squash)
        self.n_states = n_states
        self.n_goals = n_goals
        self.input_dim = input_dim
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        if mode == "tabular":
            if n_states is None or n_goals is None:
                raise ValueError("tabular mode needs n_states and n_goals")
            shape = (int(n_states), int(n_goals)) + ((self.n_actions,) if head == CATEGORICAL else ())
            self.params = np.zeros(int(np.prod(shape)))
            self._shapes = [shape]
        else:
            if input_dim is None:
                raise ValueError("mlp mode needs input_dim")
            sizes = [int(input_dim), *self.hidden, self.n_actions]
            self._shapes = []
            for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
                self._shapes += [(fan_in, fan_out), (fan_out,)]
            self.params = np.zeros(sum(int(np.prod(s)) for s in self._shapes))
            self._init_mlp(out_scale if out_scale is not None else (0.01 if head == CATEGORICAL else 1.0))
        self._bind()

    # parameter layout ------------------------------------------------------

    def _bind(self):
        self.arrays = []
        offset = 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            self.arrays.append(self.params[offset:offset + size].reshape(shape))
            offset += size

    def _init_mlp(self, out_scale):
        rng = np.random.default_rng(self.seed)
        self._bind()
        n_layers = len(self._shapes) // 2
        for i in range(n_layers):
            W = self.arrays[2 * i]
            scale = np.sqrt(1.0 / W.shape[0])
            if i == n_layers - 1:
                scale *= out_scale
            W[...] = rng.normal(0.0, scale, size=W.shape)

    @property
    def table(self) -> np.ndarray:
        if self.mode != "tabular":
            raise AttributeError("only tabular approximators have a table")
        return self.arrays[0]

    @property
    def n_params(self) -> int:
        return self.params.size

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != self.params.shape:
            raise ShapeError(f"parameter vector shape {flat.shape} != {self.params.shape}")
        self.params[...] = flat

    def copy(self) -> "Approximator":
        new = object.__new__(Approximator)
        new.__dict__.update(self.__dict__)
        new.params = self.params.copy()
        new._bind()
        return new

    def config(self) -> dict:
        return {"mode": self.mode, "head": self.head, "n_actions": self.n_actions,
                "n_states": self.n_states, "n_goals": self.n_goals, "input_dim": self.input_dim,
                "hidden": list(self.hidden), "squash": self.squash, "seed": self.seed}

    # evaluation ------------------------------------------------------------

    def prepare(self, env, states, goals):
        """Network inputs for a batch of (state, goal) pairs in ``env``."""
        if self.mode == "tabular":
            s = np.asarray(states, dtype=np.int64).reshape(-1)
            g = np.asarray(goals, dtype=np.int64).reshape(-1)
            return s, g
        return env.encode(states, goals)

    def _check(self, inputs):
        if self.mode == "tabular":
            s, g = inputs
            if s.shape != g.shape:
                raise ShapeError("state and goal index arrays differ in shape")
            if len(s) and (s.min() < 0 or s.max() >= self.n_states or g.min() < 0 or g.max() >= self.n_goals):
                raise IndexError("tabular index out of range")
        else:
            x = np.asarray(inputs)
            if x.ndim != 2 or x.shape[1] != self.input_dim:
                raise ShapeError(f"expected inputs of shape (n, {self.input_dim}), got {x.shape}")

    def _forward(self, inputs):
        """Raw head output (pre-squash) and the cache needed by ``_backward``."""
        self._check(inputs)
        if self.mode == "tabular":
            s, g = inputs
            z = self.table[s, g]
            return (z if self.head == CATEGORICAL else z.astype(np.float64)), None
        h = np.asarray(inputs, dtype=np.float64)
        acts = [h]
        n_layers = len(self.arrays) // 2
        for i in range(n_layers):
            W, b = self.arrays[2 * i], self.arrays[2 * i + 1]
            h = h @ W + b
            if i < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        z = h if self.head == CATEGORICAL else h[:, 0]
        return z, acts

    def forward(self, inputs) -> np.ndarray:
        """Logits ``(n, n_actions)`` for a categorical head, values ``(n,)`` otherwise."""
        z, _ = self._forward(inputs)
        if self.head == VALUE and self.squash:
            return _sigmoid(z)
        return z

    def __call__(self, inputs):
        return self.forward(inputs)

    def log_probs(self, inputs) -> np.ndarray:
        return log_softmax(self.forward(inputs))

    def probs(self, inputs) -> np.ndarray:
        return softmax(self.forward(inputs))

    def sample(self, inputs, rng) -> tuple[np.ndarray, np.ndarray]:
        """Sampled actions and their log-probabilities."""
        logp = self.log_probs(inputs)
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(len(logp))[:, None] * cdf[:, -1:]
        actions = np.minimum((cdf < u).sum(axis=1), self.n_actions - 1)
        return actions, logp[np.arange(len(actions)), actions]

    def greedy(self, inputs) -> np.ndarray:
        return np.argmax(self.forward(inputs), axis=1)

    def _backward(self, inputs, cache, dz) -> np.ndarray:
        grad = np.zeros_like(self.params)
        if self.mode == "tabular":
            s, g = inputs
            view = grad.reshape(self._shapes[0])
            np.add.at(view, (s, g), dz)
            return grad
        gviews = []
        offset = 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            gviews.append(grad[offset:offset + size].reshape(shape))
            offset += size
        d = dz if dz.ndim == 2 else dz[:, None]
        n_layers = len(self.arrays) // 2
        for i in range(n_layers - 1, -1, -1):
            a_in = cache[i]
            gviews[2 * i][...] = a_in.T @ d
            gviews[2 * i + 1][...] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.arrays[2 * i].T) * (1.0 - cache[i] ** 2)
        return grad


# losses: each maps (approximator, raw head output z, batch) -> (loss, dloss/dz)

def _value_and_dz(f, z):
    if f.squash:
        v = _sigmoid(z)
        return v, v * (1.0 - v)
    return z, np.ones_like(z)


def _squared_error(f, z, batch):
    v, dv_dz = _value_and_dz(f, z)
    t = np.asarray(batch["targets"], dtype=np.float64)
    mask = np.asarray(batch.get("mask", np.ones_like(t)), dtype=np.float64)
    denom = max(mask.sum(), 1.0)
    diff = v - t
    loss = float((mask * diff ** 2).sum() / denom)
    return loss, 2.0 * mask * diff / denom * dv_dz


def _weighted_nll(f, z, batch):
    a = np.asarray(batch["actions"], dtype=np.int64)
    w = np.asarray(batch["weights"], dtype=np.float64)
    n = len(a)
    logp = log_softmax(z)
    rows = np.arange(n)
    loss = float(-(w * logp[rows, a]).sum() / n)
    dz = np.exp(logp)
    dz[rows, a] -= 1.0
    return loss, dz * (w / n)[:, None]


def _clipped_surrogate(f, z, batch):
    a = np.asarray(batch["actions"], dtype=np.int64)
    adv = np.asarray(batch["advantages"], dtype=np.float64)
    old = np.asarray(batch["logp_old"], dtype=np.float64)
    eps = float(batch.get("clip_eps", 0.2))
    n = len(a)
    logp = log_softmax(z)
    rows = np.arange(n)
    ratio = np.exp(logp[rows, a] - old)
    surr = np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)
    loss = float(-surr.sum() / n)
    # gradient flows only where the unclipped branch is selected
    active = ~(((adv > 0) & (ratio > 1.0 + eps)) | ((adv < 0) & (ratio < 1.0 - eps)))
    dlogp = np.where(active, -ratio * adv / n, 0.0)
    dz = -np.exp(logp) * dlogp[:, None]
    dz[rows, a] += dlogp
    return loss, dz


def _entropy(f, z, batch):
    n = len(z)
    logp = log_softmax(z)
    p = np.exp(logp)
    H = -(p * logp).sum(axis=1)
    loss = float(-H.sum() / n)
    # dH/dz_k = -p_k (log p_k + H)
    dz = p * (logp + H[:, None]) / n
    return loss, dz


LOSSES = {
    "squared_error": _squared_error,
    "weighted_nll": _weighted_nll,
    "clipped_surrogate": _clipped_surrogate,
    "entropy": _entropy,
}


def gradient(f: Approximator, loss_spec, minibatch: dict):
    """Loss value and flat gradient of ``loss_spec`` on ``minibatch``.

    ``loss_spec`` is a registered loss name or a list of ``(name, coef)``
    pairs summed over the same minibatch. ``minibatch["inputs"]`` holds the
    prepared network inputs. Parameters are not modified.
    """
    terms = [(loss_spec, 1.0)] if isinstance(loss_spec, str) else list(loss_spec)
    for name, _ in terms:
        if name not in LOSSES:
            raise UnsupportedLossError(f"unsupported loss {name!r}; known: {sorted(LOSSES)}")
        if name != "squared_error" and f.head != CATEGORICAL:
            raise UnsupportedLossError(f"loss {name!r} needs a categorical head")
        if name == "squared_error" and f.head != VALUE:
            raise UnsupportedLossError("squared_error needs a value head")
    inputs = minibatch["inputs"]
    z, cache = f._forward(inputs)
    total = 0.0
    dz = np.zeros_like(z, dtype=np.float64)
    for name, coef in terms:
        if coef == 0.0:
            continue
        value, d = LOSSES[name](f, z, minibatch)
        total += coef * value
        dz += coef * d
    if not np.isfinite(total):
        raise NumericalFailureError(f"non-finite loss {total}", {"loss_spec": str(loss_spec)})
    return total, f._backward(inputs, cache, dz)


def loss_value(f: Approximator, loss_spec, minibatch: dict) -> float:
    terms = [(loss_spec, 1.0)] if isinstance(loss_spec, str) else list(loss_spec)
    z, _ = f._forward(minibatch["inputs"])
    return float(sum(coef * LOSSES[name](f, z, minibatch)[0] for name, coef in terms))


def clip_grad_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None or max_norm <= 0:
        return grad
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


class Adam:
    """Adam with bias correction over a flat parameter vector."""

    def __init__(self, n_params, lr=2.5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(int(n_params))
        self.v = np.zeros(int(n_params))
        self.t = 0
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)

    @classmethod
    def for_approximator(cls, f: Approximator, **kw) -> "Adam":
        return cls(f.n_params, **kw)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if grad.shape != params.shape or grad.shape != self.m.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t, "lr": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(f: Approximator, opt: Adam, grad: np.ndarray) -> np.ndarray:
    """Apply one Adam update to ``f`` in place and return its parameters."""
    return opt.step(f.params, np.asarray(grad, dtype=np.float64))


def tabular_set(f: Approximator, state: int, goal: int, value) -> None:
    """Overwrite one table entry (a value, or a logits vector for a policy)."""
    if f.mode != "tabular":
        raise ValueError("tabular_set needs a tabular approximator")
    if not (0 <= state < f.n_states and 0 <= goal < f.n_goals):
        raise IndexError(f"entry ({state}, {goal}) outside table {f.table.shape[:2]}")
    f.table[state, goal] = value


def checksum(f: Approximator) -> str:
    import hashlib
    return hashlib.sha256(f.params.tobytes()).hexdigest()


# checkpoints -----------------------------------------------------------------
#
# Checkpoints are numpy ``.npz`` archives (float64, little-endian as written by
# numpy). Layout, all keys optional except ``meta``:
#   meta                   JSON string: {"version": 1, "nets": {name: config},
#                          "optimizers": {name: {"t", "lr", "beta1", ...}},
#                          "extra": {...}}
#   net/<name>/params      flat parameter vector
#   opt/<name>/m, opt/<name>/v   Adam moments

def save_checkpoint(path, nets: dict, optimizers: dict | None = None, extra: dict | None = None) -> None:
    optimizers = optimizers or {}
    meta = {
        "version": CHECKPOINT_VERSION,
        "nets": {k: f.config() for k, f in nets.items()},
        "optimizers": {k: {kk: vv for kk, vv in o.state().items() if kk not in ("m", "v")}
                       for k, o in optimizers.items()},
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for k, f in nets.items():
        arrays[f"net/{k}/params"] = f.params
    for k, o in optimizers.items():
        arrays[f"opt/{k}/m"] = o.m
        arrays[f"opt/{k}/v"] = o.v
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path):
    """Returns ``(nets, optimizers, extra)`` rebuilt from ``save_checkpoint`` output."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        nets = {}
        for name, cfg in meta["nets"].items():
            cfg = dict(cfg)
            f = Approximator(cfg.pop("mode"), cfg.pop("head"), **cfg)
            f.set_params(data[f"net/{name}/params"])
            nets[name] = f
        opts = {}
        for name, st in meta["optimizers"].items():
            o = Adam(len(data[f"opt/{name}/m"]), lr=st["lr"], beta1=st["beta1"], beta2=st["beta2"], eps=st["eps"])
            o.m[...] = data[f"opt/{name}/m"]
            o.v[...] = data[f"opt/{name}/v"]
            o.t = int(st["t"])
            opts[name] = o
    return nets, opts, meta.get("extra", {})


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
