"""Comparison policies: round robin, least connections, HPA and rule-based scaling.

All of these are deterministic. Stateful ones take their state (a counter,
a last-change timestamp) explicitly and hand the updated value back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence


def round_robin_assign(counter: int, n: int) -> tuple[int, int]:
    """Return ``(node, next_counter)``."""
    if n < 1:
        raise ValueError("need at least one node")
    return counter % n, counter + 1


def least_connections_assign(counts: Sequence[int]) -> int:
    """Index of the smallest count; the lowest index wins ties."""
    if len(counts) < 1:
        raise ValueError("need at least one node")
    best = 0
    for i, c in enumerate(counts):
        if c < counts[best]:
            best = i
    return best


@dataclass
class HpaConfig:
    target_utilization: float = 0.6
    min_replicas: int = 1
    max_replicas: int = 16
    cooldown_s: float = 30.0
    # Kubernetes skips scaling while |observed/target - 1| <= tolerance
    tolerance: float = 0.0

    def __post_init__(self):
        if not 0 < self.target_utilization <= 1:
            raise ValueError("target_utilization must be in (0, 1]")
        if self.min_replicas > self.max_replicas:
            raise ValueError("min_replicas must be <= max_replicas")
        if self.cooldown_s < 0:
            raise ValueError("cooldown_s must be >= 0")


def hpa_desired_replicas(
    current: int,
    observed_utilization: float,
    cfg: HpaConfig,
    now: float = 0.0,
    last_change: float | None = None,
) -> int:
    """Kubernetes rule ``ceil(current * observed / target)``, clamped and cooldown-gated.

    The product is rounded to 9 decimals before ``ceil`` so that e.g.
    4 * 0.9 / 0.6 lands on 6 rather than 6.000000000000001 -> 7.
    """
    if last_change is not None and now - last_change < cfg.cooldown_s:
        return current
    ratio = observed_utilization / cfg.target_utilization
    if abs(ratio - 1.0) <= cfg.tolerance:
        desired = current
    else:
        desired = math.ceil(round(current * ratio, 9))
    return max(cfg.min_replicas, min(cfg.max_replicas, desired))


@dataclass
class RbasRule:
    metric: str = "utilization"  # utilization | queue_length
    upper_threshold: float = 0.8
    lower_threshold: float = 0.3
    scale_delta: int = 1
    cooldown_s: float = 30.0

    def __post_init__(self):
        if self.metric not in ("utilization", "queue_length"):
            raise ValueError(f"unknown RBAS metric {self.metric!r}")
        if not self.lower_threshold < self.upper_threshold:
            raise ValueError("lower_threshold must be < upper_threshold")


DEFAULT_RBAS_RULES = (RbasRule(),)


@dataclass
class RbasState:
    last_fired: dict = field(default_factory=dict)  # rule index -> time


def rbas_decide(
    observed: float | Mapping[str, float],
    current_units: int,
    rules: Sequence[RbasRule] = DEFAULT_RBAS_RULES,
    now: float = 0.0,
    state: RbasState | None = None,
) -> tuple[int, RbasState]:
    """Units delta from the first rule whose band the metric leaves.

    Above ``upper_threshold`` a rule yields ``+scale_delta``, below
    ``lower_threshold`` it yields ``-scale_delta``. A rule inside its cooldown
    window is skipped. ``observed`` is either one value for every rule or a
    mapping from metric name to value.
    """
    state = RbasState() if state is None else RbasState(dict(state.last_fired))
    for idx, rule in enumerate(rules):
        value = observed[rule.metric] if isinstance(observed, Mapping) else observed
        if value > rule.upper_threshold:
            delta = abs(rule.scale_delta)
        elif value < rule.lower_threshold:
            delta = -abs(rule.scale_delta)
        else:
            continue
        last = state.last_fired.get(idx)
        if last is not None and now - last < rule.cooldown_s:
            continue
        state.last_fired[idx] = now
        return delta, state
    return 0, state
