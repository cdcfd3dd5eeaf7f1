"""Balancers and autoscalers wired to the simulator loop.

A balancer routes each arrival (``assign``) and sees every metrics sample
(``observe``). An autoscaler sees every sample too and may call
``state.apply_allocation``.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ..autoscale_gpso import FitnessConfig, GpsoConfig, ProportionalLoad, optimize
from ..balancer_rl import DdpgAgent, RewardConfig, StateBuilder, compute_reward, shared_policy_act
from ..baselines import (
    HpaConfig,
    RbasState,
    hpa_desired_replicas,
    least_connections_assign,
    rbas_decide,
    round_robin_assign,
)


def spread(total: int, n: int, lo: int, hi: int) -> np.ndarray:
    """Split ``total`` units over ``n`` nodes as evenly as the bounds allow."""
    total = int(np.clip(total, n * lo, n * hi))
    plan = np.full(n, total // n)
    plan[: total % n] += 1
    return plan


class DemandFeed:
    """Keeps recent arrival rates and produces request/work-rate forecasts."""

    def __init__(self, model, window: int, horizon: int):
        self.model = model
        self.window = window
        self.horizon = horizon
        self.history: deque = deque(maxlen=window)
        self.arrivals = 0
        self.work = 0.0

    def observe(self, sample) -> None:
        if sample.interval > 0:
            self.history.append(sample.arrivals / sample.interval)
        self.arrivals += sample.arrivals
        self.work += sample.arrived_work

    @property
    def mean_cost(self) -> float:
        return self.work / self.arrivals if self.arrivals else 1.0

    def request_rates(self) -> np.ndarray:
        if not self.history:
            return np.zeros(self.horizon)
        recent = list(self.history)
        recent = [recent[0]] * (self.window - len(recent)) + recent
        return np.asarray(self.model.predict_horizon(np.asarray(recent)), dtype=float)

    def work_rates(self) -> np.ndarray:
        return self.request_rates() * self.mean_cost


# -- balancers ----------------------------------------------------------------


class RoundRobin:
    name = "round-robin"

    def __init__(self, n: int):
        self.n = n
        self.counter = 0

    def assign(self, state, request) -> int:
        node, self.counter = round_robin_assign(self.counter, self.n)
        return node

    def observe(self, sample, feed) -> None:
        pass


class LeastConnections:
    name = "least-connections"

    def assign(self, state, request) -> int:
        return least_connections_assign([nd.load if nd.accepts_work else 1 << 62 for nd in state.nodes])

    def observe(self, sample, feed) -> None:
        pass


class DdpgBalancer:
    """Acts once per sample interval; the action routes arrivals until the next."""

    name = "ddpg"

    def __init__(self, agent: DdpgAgent, reward: RewardConfig, training: bool = False,
                 shared: bool = False, train_every: int = 1, builder: StateBuilder | None = None):
        self.agent = agent
        self.reward_cfg = reward
        self.training = training
        self.shared = shared
        self.train_every = train_every
        self.builder = builder or StateBuilder(agent.cfg.horizon)
        self.action = np.full(agent.n_nodes, 1.0 / agent.n_nodes)
        self.prev_state = None
        self.rows: list[tuple] = []
        self.rewards: list[float] = []
        self.actions: list[np.ndarray] = []
        self.steps = 0

    def assign(self, state, request):
        return self.action

    def observe(self, sample, feed) -> None:
        s = self.builder.build(sample, feed.request_rates())
        if self.prev_state is not None:
            rts = sample.response_times
            r = compute_reward(float(rts.mean()) if len(rts) else 0.0, sample.utilization, self.reward_cfg)
            self.rewards.append(r)
            if self.training:
                self.agent.remember(self.prev_state, self.action, r, s)
                out = None
                if self.steps % self.train_every == 0:
                    out = self.agent.train_step()
                crit, obj = out if out is not None else (float("nan"), float("nan"))
                self.rows.append((crit, obj, r))
            self.steps += 1
        if self.shared and not self.training:
            self.action = shared_policy_act(self.agent, s)[0].fractions
        else:
            self.action = self.agent.act(s, explore=self.training).fractions
        self.actions.append(self.action)
        self.prev_state = s


# -- autoscalers --------------------------------------------------------------


class Static:
    name = "static"

    def observe(self, state, sample, feed, step: int) -> None:
        pass


class Hpa:
    name = "hpa"

    def __init__(self, cfg: HpaConfig, interval_steps: int):
        self.cfg = cfg
        self.interval_steps = interval_steps
        self.last_change: float | None = None
        self.window: list[float] = []

    def observe(self, state, sample, feed, step: int) -> None:
        self.window.append(float(np.mean(sample.utilization)))
        if (step + 1) % self.interval_steps:
            return
        observed = float(np.mean(self.window))
        self.window.clear()
        current = int(state.units().sum())
        desired = hpa_desired_replicas(max(current, self.cfg.min_replicas), observed, self.cfg,
                                       state.clock, self.last_change)
        if desired != current:
            state.apply_allocation(spread(desired, state.n_nodes, state.min_units, state.max_units))
            self.last_change = state.clock


class Rbas:
    name = "rbas"

    def __init__(self, rules, interval_steps: int):
        self.rules = rules
        self.interval_steps = interval_steps
        self.state = RbasState()
        self.window: list[tuple[float, float]] = []

    def observe(self, state, sample, feed, step: int) -> None:
        self.window.append((float(np.mean(sample.utilization)), float(np.mean(sample.queue_lengths))))
        if (step + 1) % self.interval_steps:
            return
        util, queue = np.mean(self.window, axis=0)
        self.window.clear()
        current = int(state.units().sum())
        delta, self.state = rbas_decide(
            {"utilization": util, "queue_length": queue}, current, self.rules, state.clock, self.state
        )
        if delta:
            state.apply_allocation(spread(current + delta, state.n_nodes, state.min_units, state.max_units))


class Gpso:
    """Re-plans per-node units from the work-rate forecast every few intervals."""

    name = "gpso"

    def __init__(self, cfg: GpsoConfig, lam: float, interval_steps: int, unit_cost, unit_rate):
        self.cfg = cfg
        self.lam = lam
        self.interval_steps = interval_steps
        self.unit_cost = np.asarray(unit_cost, dtype=float)
        self.unit_rate = np.asarray(unit_rate, dtype=float)
        self.calls = 0
        self.traces: list = []

    def observe(self, state, sample, feed, step: int) -> None:
        if (step + 1) % self.interval_steps:
            return
        # plan for the peak of the horizon so capacity is in place before it lands
        demand = float(np.max(feed.work_rates()))
        fit_cfg = FitnessConfig(
            costs=self.unit_cost,
            lam=self.lam,
            load_model=ProportionalLoad(demand, self.unit_rate),
            lower=state.min_units,
            upper=state.max_units,
        )
        cfg = GpsoConfig(**{**self.cfg.__dict__, "seed": self.cfg.seed + self.calls})
        result = optimize(cfg, fit_cfg)
        self.calls += 1
        self.traces.append(result.trace)
        state.apply_allocation(result.plan)
