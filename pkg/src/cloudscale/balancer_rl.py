"""GCN feature extraction and DDPG allocation policy for request routing.

The agent observes per-node load, utilisation and capacity plus a forecast
of aggregate demand. A graph convolution over the node topology produces
per-node embeddings; the actor scores each node from its embedding, its own
raw features (dense graphs smooth embeddings towards the mean) and the
forecast, and a softmax across nodes turns scores into routing fractions
that always lie on the simplex. The critic scores (state, fractions) pairs
the same way and averages across nodes.

Batches of ``B`` states are processed together by stacking node rows into a
``B*N`` matrix and propagating with the block-diagonal adjacency.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _layers
from .numgrad import (
    Adam,
    GradientTape,
    Tensor,
    apply_activation,
    add,
    backward,
    concat_cols,
    matmul,
    mse,
    reshape,
    scale,
    softmax_rows,
    sum_all,
)

N_FEATURES = 3  # load, utilisation, capacity


# -- graph convolution --------------------------------------------------------


def normalize_adjacency(adjacency) -> np.ndarray:
    """Symmetric normalisation ``D^-1/2 (A + I) D^-1/2``."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    a_tilde = a + np.eye(len(a))
    d = a_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


@dataclass
class GcnStack:
    weights: list  # W^(l), each F_l x F_{l+1}
    activations: list

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a GCN needs at least one layer")
        if len(self.activations) != len(self.weights):
            raise ValueError("one activation per layer")
        for k in range(len(self.weights) - 1):
            if np.shape(self.weights[k])[1] != np.shape(self.weights[k + 1])[0]:
                raise ValueError(f"layer {k} output does not feed layer {k + 1}")

    @property
    def depth(self) -> int:
        return len(self.weights)


def gcn_forward(x: Tensor, a_hat: Tensor, stack: GcnStack) -> Tensor:
    """Apply every layer: ``H <- act(A_hat @ H @ W)``.

    ``stack.weights`` may hold tensors (to train through them) or arrays.
    """
    h = x
    for w, act in zip(stack.weights, stack.activations):
        w = w if isinstance(w, Tensor) else Tensor(w)
        h = apply_activation(matmul(matmul(a_hat, h), w), act)
    return h


# -- state, action, reward ----------------------------------------------------


@dataclass
class StateVector:
    loads: np.ndarray
    utilizations: np.ndarray
    forecast: np.ndarray
    node_features: np.ndarray  # N x 3, scaled

    def __post_init__(self):
        n = len(self.loads)
        if len(self.utilizations) != n or self.node_features.shape != (n, N_FEATURES):
            raise ValueError("state lengths disagree on N")
        if np.any(self.utilizations < 0) or np.any(self.utilizations > 1):
            raise ValueError("utilisations must lie in [0, 1]")

    @property
    def n_nodes(self) -> int:
        return len(self.loads)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.node_features.ravel(), self.forecast])


@dataclass
class ActionVector:
    fractions: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=float)
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
            raise ValueError(f"not a distribution over nodes: {f}")
        self.fractions = f

    def __len__(self) -> int:
        return len(self.fractions)


class StateBuilder:
    """Scales node features and forecasts by the running maxima seen so far."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self.max_load = 0.0
        self.max_capacity = 0.0
        self.max_forecast = 0.0

    def build(self, sample, forecast: Sequence[float]) -> StateVector:
        forecast = np.asarray(forecast, dtype=float)
        if forecast.shape != (self.horizon,):
            raise ValueError(f"forecast must have length {self.horizon}, got {forecast.shape}")
        loads = np.asarray(sample.loads, dtype=float)
        util = np.asarray(sample.utilization, dtype=float)
        cap = np.asarray(sample.capacity, dtype=float)
        if not (len(loads) == len(util) == len(cap)):
            raise ValueError("sample lengths disagree on N")
        self.max_load = max(self.max_load, float(loads.max(initial=0.0)))
        self.max_capacity = max(self.max_capacity, float(cap.max(initial=0.0)))
        self.max_forecast = max(self.max_forecast, float(forecast.max(initial=0.0)))
        x = np.column_stack(
            [_safe_div(loads, self.max_load), util, _safe_div(cap, self.max_capacity)]
        )
        return StateVector(loads, util, _safe_div(forecast, self.max_forecast), x)

    def to_json(self) -> dict:
        return {"max_load": self.max_load, "max_capacity": self.max_capacity, "max_forecast": self.max_forecast}

    def load_json(self, obj: dict) -> None:
        self.max_load = obj["max_load"]
        self.max_capacity = obj["max_capacity"]
        self.max_forecast = obj["max_forecast"]


def _safe_div(x: np.ndarray, d: float) -> np.ndarray:
    return x / d if d > 0 else np.zeros_like(x)


def build_state(sample, forecast: Sequence[float], builder: StateBuilder | None = None) -> StateVector:
    builder = StateBuilder(len(forecast)) if builder is None else builder
    return builder.build(sample, forecast)


@dataclass
class RewardConfig:
    alpha: float = 1.0
    beta: float = 1.0
    utilization_statistic: str = "imbalance-stddev"  # or "mean"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("need alpha, beta >= 0 with alpha + beta > 0")
        if self.utilization_statistic not in ("imbalance-stddev", "mean"):
            raise ValueError(f"unknown utilisation statistic {self.utilization_statistic!r}")


def compute_reward(response_time: float, utilizations: Sequence[float], cfg: RewardConfig) -> float:
    """``-(alpha * response_time + beta * stat(U))``."""
    if response_time < 0:
        raise ValueError("response time must be >= 0")
    u = np.asarray(utilizations, dtype=float)
    stat = float(u.std()) if cfg.utilization_statistic == "imbalance-stddev" else float(u.mean())
    return -(cfg.alpha * response_time + cfg.beta * stat)


# -- agent --------------------------------------------------------------------


@dataclass
class DdpgConfig:
    gamma: float = 0.95
    tau: float = 0.01
    replay_capacity: int = 50_000
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gcn_depth: int = 2
    gcn_width: int = 32
    hidden: list = field(default_factory=lambda: [32])
    activation: str = "relu"
    noise_start: float = 0.3
    noise_end: float = 0.02
    noise_decay_steps: int = 10_000
    target_uses_st: bool = False
    logit_l2: float = 0.0
    horizon: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if self.batch_size < 1 or self.replay_capacity < self.batch_size:
            raise ValueError("replay capacity must hold at least one batch")
        if self.gcn_depth < 1:
            raise ValueError("gcn_depth must be >= 1")
        if self.logit_l2 < 0:
            raise ValueError("logit_l2 must be >= 0")


class GaussianNoise:
    """Logit-space exploration noise; stddev decays linearly with steps."""

    def __init__(self, start: float, end: float, decay_steps: int):
        self.start = start
        self.end = end
        self.decay_steps = decay_steps

    def sigma(self, step: int) -> float:
        if self.decay_steps <= 0:
            return self.end
        frac = min(step / self.decay_steps, 1.0)
        return (1.0 - frac) * self.start + frac * self.end


class ReplayBuffer:
    """Fixed-capacity ring buffer of (S, A, R, S') transitions."""

    def __init__(self, capacity: int, n_nodes: int, horizon: int):
        self.capacity = capacity
        self.x = np.zeros((capacity, n_nodes, N_FEATURES))
        self.f = np.zeros((capacity, horizon))
        self.a = np.zeros((capacity, n_nodes))
        self.r = np.zeros(capacity)
        self.x2 = np.zeros((capacity, n_nodes, N_FEATURES))
        self.f2 = np.zeros((capacity, horizon))
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s: StateVector, a, r: float, s2: StateVector) -> None:
        i = self.pos
        self.x[i], self.f[i] = s.node_features, s.forecast
        self.a[i] = np.asarray(a.fractions if isinstance(a, ActionVector) else a)
        self.r[i] = r
        self.x2[i], self.f2[i] = s2.node_features, s2.forecast
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.x[idx], self.f[idx], self.a[idx], self.r[idx], self.x2[idx], self.f2[idx])


@dataclass
class Batch:
    x: np.ndarray  # B x N x F
    f: np.ndarray  # B x T
    a: np.ndarray  # B x N
    r: np.ndarray  # B
    x2: np.ndarray
    f2: np.ndarray

    def __len__(self) -> int:
        return len(self.r)

    @classmethod
    def from_transitions(cls, transitions) -> Batch:
        """Build from ``[(StateVector, action, reward, StateVector), ...]``."""
        if not transitions:
            raise ValueError("empty batch")
        s, a, r, s2 = zip(*transitions)
        return cls(
            np.stack([t.node_features for t in s]),
            np.stack([t.forecast for t in s]),
            np.stack([np.asarray(getattr(x, "fractions", x), dtype=float) for x in a]),
            np.asarray(r, dtype=float),
            np.stack([t.node_features for t in s2]),
            np.stack([t.forecast for t in s2]),
        )


class _Graph:
    """Constant matrices for one (batch size, adjacency) shape."""

    def __init__(self, blocks: Sequence[np.ndarray]):
        b = len(blocks)
        n = blocks[0].shape[0]
        big = np.zeros((b * n, b * n))
        for k, blk in enumerate(blocks):
            big[k * n : (k + 1) * n, k * n : (k + 1) * n] = blk
        self.a_hat = Tensor(big)
        self.expand = Tensor(np.kron(np.eye(b), np.ones((n, 1))))  # B*N x B
        self.pool = Tensor(np.kron(np.eye(b), np.full((1, n), 1.0 / n)))  # B x B*N
        self.b, self.n = b, n


def actor_names(cfg: DdpgConfig) -> list[str]:
    return [f"agcn.W{k}" for k in range(cfg.gcn_depth)] + [
        f"actor.{w}{k}" for k in range(len(cfg.hidden) + 1) for w in ("W", "b")
    ]


def critic_names(cfg: DdpgConfig) -> list[str]:
    return [f"cgcn.W{k}" for k in range(cfg.gcn_depth)] + [
        f"critic.{w}{k}" for k in range(len(cfg.hidden) + 1) for w in ("W", "b")
    ]


def init_params(cfg: DdpgConfig, rng: np.random.Generator | None) -> dict:
    """Actor and critic parameters; ``rng=None`` zero-initialises everything."""
    params = {}
    gcn_sizes = [N_FEATURES] + [cfg.gcn_width] * cfg.gcn_depth
    for prefix in ("agcn", "cgcn"):
        for k in range(cfg.gcn_depth):
            fan_in, fan_out = gcn_sizes[k], gcn_sizes[k + 1]
            if rng is None:
                params[f"{prefix}.W{k}"] = np.zeros((fan_in, fan_out))
            else:
                lim = np.sqrt(6.0 / (fan_in + fan_out))
                params[f"{prefix}.W{k}"] = rng.uniform(-lim, lim, (fan_in, fan_out))
    params.update(
        _layers.init_mlp("actor", [cfg.gcn_width + N_FEATURES + cfg.horizon, *cfg.hidden, 1], rng, out_scale=0.1)
    )
    params.update(
        _layers.init_mlp("critic", [cfg.gcn_width + N_FEATURES + 1 + cfg.horizon, *cfg.hidden, 1], rng)
    )
    return params


class DdpgAgent:
    def __init__(self, cfg: DdpgConfig, adjacency, init: str = "random"):
        self.cfg = cfg
        self.adjacency = np.asarray(adjacency, dtype=float)
        self.a_hat = normalize_adjacency(self.adjacency)
        self.n_nodes = len(self.a_hat)
        self.rng = np.random.default_rng(cfg.seed)
        self.params = init_params(cfg, None if init == "zeros" else self.rng)
        self.target = {k: v.copy() for k, v in self.params.items()}
        self.actor_opt = Adam(cfg.actor_lr)
        self.critic_opt = Adam(cfg.critic_lr)
        self.replay = ReplayBuffer(cfg.replay_capacity, self.n_nodes, cfg.horizon)
        self.noise = GaussianNoise(cfg.noise_start, cfg.noise_end, cfg.noise_decay_steps)
        self.act_steps = 0
        self.train_steps = 0
        self._graphs: dict = {}

    @property
    def gcn(self) -> GcnStack:
        names = [f"agcn.W{k}" for k in range(self.cfg.gcn_depth)]
        return GcnStack([self.params[k] for k in names], [self.cfg.activation] * len(names))

    def _graph(self, b: int) -> _Graph:
        g = self._graphs.get(b)
        if g is None:
            g = self._graphs[b] = _Graph([self.a_hat] * b)
        return g

    # networks ----------------------------------------------------------------

    def _embed(self, p, prefix: str, x: np.ndarray, g: _Graph) -> Tensor:
        h = Tensor(x.reshape(g.b * g.n, N_FEATURES))
        for k in range(self.cfg.gcn_depth):
            h = apply_activation(matmul(matmul(g.a_hat, h), p[f"{prefix}.W{k}"]), self.cfg.activation)
        return h

    def _actor_logits(self, p, x: np.ndarray, f: np.ndarray, g: _Graph) -> Tensor:
        h = self._embed(p, "agcn", x, g)
        z = concat_cols(h, Tensor(x.reshape(g.b * g.n, N_FEATURES)), matmul(g.expand, Tensor(f)))
        out = _layers.mlp(p, "actor", z, len(self.cfg.hidden) + 1, self.cfg.activation)
        return reshape(out, g.b, g.n)

    def _critic(self, p, x: np.ndarray, f: np.ndarray, actions, g: _Graph) -> Tensor:
        """Q for each of B states; ``actions`` is B x N (tensor or array)."""
        actions = actions if isinstance(actions, Tensor) else Tensor(actions)
        h = self._embed(p, "cgcn", x, g)
        # fractions scaled by N so a uniform split reads as 1 regardless of N
        a_col = scale(reshape(actions, g.b * g.n, 1), g.n)
        z = concat_cols(h, Tensor(x.reshape(g.b * g.n, N_FEATURES)), a_col, matmul(g.expand, Tensor(f)))
        v = _layers.mlp(p, "critic", z, len(self.cfg.hidden) + 1, self.cfg.activation)
        return matmul(g.pool, v)

    def policy(self, params: dict, x: np.ndarray, f: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
        g = self._graph(len(x))
        logits = self._actor_logits(_layers.as_constants(params), x, f, g)
        if noise is not None:
            logits = Tensor(logits.data + noise)
        return softmax_rows(logits).data

    def q_values(self, params: dict, x, f, actions) -> np.ndarray:
        g = self._graph(len(x))
        return self._critic(_layers.as_constants(params), x, f, actions, g).data[:, 0]

    # public ops --------------------------------------------------------------

    def act(self, state: StateVector, explore: bool = False) -> ActionVector:
        if state.n_nodes != self.n_nodes or len(state.forecast) != self.cfg.horizon:
            raise ValueError("state dimensions do not match the agent")
        noise = None
        if explore:
            sigma = self.noise.sigma(self.act_steps)
            noise = self.rng.normal(0.0, sigma, size=(1, self.n_nodes))
            self.act_steps += 1
        probs = self.policy(self.params, state.node_features[None], state.forecast[None], noise)[0]
        # exact renormalisation keeps the sum at 1 to the last ulp or so
        return ActionVector(probs / probs.sum())

    def td_targets(self, batch: Batch) -> np.ndarray:
        cfg = self.cfg
        next_state_for_policy = (batch.x, batch.f) if cfg.target_uses_st else (batch.x2, batch.f2)
        a2 = self.policy(self.target, *next_state_for_policy)
        q2 = self.q_values(self.target, batch.x2, batch.f2, a2)
        return batch.r + cfg.gamma * q2

    def _critic_loss(self, p, batch: Batch, y: np.ndarray) -> Tensor:
        g = self._graph(len(batch))
        q = self._critic(p, batch.x, batch.f, batch.a, g)
        return mse(q, Tensor(y[:, None]))

    def critic_loss(self, batch: Batch) -> float:
        if len(batch) == 0:
            raise ValueError("empty batch")
        return self._critic_loss(_layers.as_constants(self.params), batch, self.td_targets(batch)).item()

    def train_step(self, batch: Batch | None = None) -> tuple[float, float] | None:
        """One critic step, one actor step, then soft target updates.

        Returns ``(critic_loss, actor_objective)``, or None when the replay
        buffer cannot fill a batch yet.
        """
        cfg = self.cfg
        if batch is None:
            if len(self.replay) < cfg.batch_size:
                return None
            batch = self.replay.sample(cfg.batch_size, self.rng)
        if len(batch) == 0:
            raise ValueError("empty batch")

        y = self.td_targets(batch)
        c_names = critic_names(cfg)
        tape = GradientTape()
        p = _layers.as_constants(self.params)
        p.update(_layers.watch_all(tape, self.params, c_names))
        loss = self._critic_loss(p, batch, y)
        grads = backward(loss, tape)
        self.critic_opt.step(self.params, {k: grads[p[k]].data for k in c_names})

        a_names = actor_names(cfg)
        tape = GradientTape()
        p = _layers.as_constants(self.params)
        p.update(_layers.watch_all(tape, self.params, a_names))
        g = self._graph(len(batch))
        logits = self._actor_logits(p, batch.x, batch.f, g)
        q = self._critic(p, batch.x, batch.f, softmax_rows(logits), g)
        objective = scale(sum_all(q), 1.0 / len(batch))
        actor_loss = scale(objective, -1.0)
        if cfg.logit_l2 > 0:
            # keeps logits out of the flat region of the softmax
            penalty = mse(logits, Tensor(np.zeros(logits.shape)))
            actor_loss = add(actor_loss, scale(penalty, cfg.logit_l2))
        grads = backward(actor_loss, tape)
        self.actor_opt.step(self.params, {k: grads[p[k]].data for k in a_names})

        self.soft_update()
        self.train_steps += 1
        return loss.item(), objective.item()

    def soft_update(self) -> None:
        tau = self.cfg.tau
        for k, v in self.params.items():
            self.target[k] = tau * v + (1.0 - tau) * self.target[k]

    def remember(self, s: StateVector, a, r: float, s2: StateVector) -> None:
        self.replay.add(s, a, r, s2)

    # persistence -------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "config": asdict(self.cfg),
            "adjacency": self.adjacency.tolist(),
            "params": _layers.params_to_json(self.params),
            "target": _layers.params_to_json(self.target),
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "rng_state": self.rng.bit_generator.state,
            "act_steps": self.act_steps,
            "train_steps": self.train_steps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> DdpgAgent:
        agent = cls(DdpgConfig(**obj["config"]), np.array(obj["adjacency"]), init="zeros")
        agent.params = _layers.params_from_json(obj["params"])
        agent.target = _layers.params_from_json(obj["target"])
        agent.actor_opt.load_state_dict(obj["actor_opt"])
        agent.critic_opt.load_state_dict(obj["critic_opt"])
        agent.rng.bit_generator.state = obj["rng_state"]
        agent.act_steps = obj["act_steps"]
        agent.train_steps = obj["train_steps"]
        return agent

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> DdpgAgent:
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def actor_act(agent: DdpgAgent, state: StateVector, explore: bool = False) -> ActionVector:
    return agent.act(state, explore)


def critic_td_loss(agent: DdpgAgent, batch: Batch) -> float:
    return agent.critic_loss(batch)


def train_step(agent: DdpgAgent, batch: Batch | None = None):
    return agent.train_step(batch)


def rotation(n: int, k: int) -> np.ndarray:
    """Node order with node ``k`` first, the rest following cyclically."""
    return (k + np.arange(n)) % n


def shared_policy_act(agent: DdpgAgent, state: StateVector) -> tuple[ActionVector, list[ActionVector]]:
    """Every node runs the shared actor on its own rotated view of the state.

    Each node's output is mapped back to global node order; the cluster
    action is the renormalised average. Returns ``(cluster, per_node)``.
    """
    n = state.n_nodes
    orders = [rotation(n, k) for k in range(n)]
    graph = _Graph([agent.a_hat[np.ix_(o, o)] for o in orders])
    x = np.stack([state.node_features[o] for o in orders])
    f = np.repeat(state.forecast[None], n, axis=0)
    logits = agent._actor_logits(_layers.as_constants(agent.params), x, f, graph)
    local = softmax_rows(logits).data
    per_node = []
    for o, probs in zip(orders, local):
        glob = np.empty(n)
        glob[o] = probs
        per_node.append(ActionVector(glob / glob.sum()))
    mean = np.mean([a.fractions for a in per_node], axis=0)
    return ActionVector(mean / mean.sum()), per_node
