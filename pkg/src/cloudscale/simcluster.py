"""Deterministic discrete-event simulation of an inference cluster.

Each node serves one request at a time from a FIFO queue at
``rate = units * unit_rate`` service units per second. Arrivals are routed
by a policy callback; resource changes take effect after an actuation
delay and re-time the request in service from that instant onward.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# Simultaneous events resolve in this order, then by insertion sequence.
FINISH, ACTUATE, ARRIVAL = 0, 1, 2

TRACE_SCHEMA = "gcd-csv-v1"
TRACE_COLUMNS = ("timestamp_s", "cpu_request", "duration_s")


class PolicyError(RuntimeError):
    pass


class TraceValidationError(ValueError):
    pass


class AllocationError(ValueError):
    pass


@dataclass
class Request:
    request_id: int
    arrival_time: float
    cost: float
    assigned_node: int | None = None
    start_time: float | None = None
    finish_time: float | None = None
    rejected: bool = False

    @property
    def response_time(self) -> float | None:
        if self.finish_time is None:
            return None
        return self.finish_time - self.arrival_time


@dataclass
class NodeSpec:
    node_id: int
    units: int
    unit_rate: float
    queue: deque = field(default_factory=deque)
    in_service: Request | None = None
    remaining: float = 0.0  # service units left on the request in service
    last_update: float = 0.0
    finish_version: int = 0
    # cumulative accounting, advanced lazily by _accrue
    busy_time: float = 0.0
    busy_unit_seconds: float = 0.0
    provisioned_unit_seconds: float = 0.0
    served_work: float = 0.0

    @property
    def capacity(self) -> float:
        return self.units * self.unit_rate

    @property
    def accepts_work(self) -> bool:
        return self.units > 0

    @property
    def load(self) -> int:
        return len(self.queue) + (self.in_service is not None)


@dataclass
class WorkloadProfile:
    kind: str = "steady"  # steady | diurnal | bursty | trace
    base_rate: float = 1.0
    amplitude: float = 0.0
    period: float = 86400.0
    burst_rate: float = 0.0
    burst_duration: float = 0.0
    burst_spacing: float = 0.0
    burst_offset: float = 0.0
    cost: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    duration: float = 60.0
    seed: int = 0
    trace_path: str | None = None
    cost_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("steady", "diurnal", "bursty", "trace"):
            raise ValueError(f"unknown workload kind {self.kind!r}")
        for name in ("base_rate", "burst_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")
        if self.kind == "diurnal" and self.period <= 0:
            raise ValueError("period must be > 0")
        if self.kind == "trace" and not self.trace_path:
            raise ValueError("trace workloads need trace_path")

    def rate(self, t: float) -> float:
        """Instantaneous arrival rate (requests/s) at time ``t``."""
        if self.kind == "diurnal":
            r = self.base_rate * (1.0 + self.amplitude * math.sin(2.0 * math.pi * t / self.period))
            return max(r, 0.0)
        if self.kind == "bursty":
            if self.burst_spacing > 0 and t >= self.burst_offset:
                if (t - self.burst_offset) % self.burst_spacing < self.burst_duration:
                    return self.base_rate + self.burst_rate
            return self.base_rate
        return self.base_rate

    def peak_rate(self) -> float:
        if self.kind == "diurnal":
            return self.base_rate * (1.0 + abs(self.amplitude))
        if self.kind == "bursty":
            return self.base_rate + self.burst_rate
        return self.base_rate


@dataclass
class MetricsSample:
    clock: float
    interval: float
    utilization: np.ndarray  # U_i over the interval, in [0, 1]
    loads: np.ndarray  # queue length + in-flight
    queue_lengths: np.ndarray
    in_flight: np.ndarray
    units: np.ndarray
    capacity: np.ndarray
    busy_unit_seconds: np.ndarray
    provisioned_unit_seconds: np.ndarray
    response_times: np.ndarray  # of requests finished during the interval
    arrivals: int  # requests arriving during the interval
    arrived_work: float
    submitted: int
    completed: int
    queued: int
    in_service: int
    rejected: int

    @property
    def n_nodes(self) -> int:
        return len(self.units)


# -- workload -----------------------------------------------------------------


def _draw_costs(spec: dict, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        value = float(spec["value"])
        if value <= 0:
            raise ValueError("constant cost must be > 0")
        return np.full(n, value)
    if kind == "uniform":
        lo, hi = float(spec["low"]), float(spec["high"])
        if not 0 < lo <= hi:
            raise ValueError("uniform cost needs 0 < low <= high")
        return rng.uniform(lo, hi, size=n)
    raise ValueError(f"unknown cost distribution {kind!r}")


def generate_workload(profile: WorkloadProfile) -> list[Request]:
    """Poisson arrivals over ``[0, duration)`` following ``profile.rate``.

    Time-varying rates are sampled by thinning against the peak rate. Trace
    profiles replay the file, keeping arrivals before ``duration``.
    """
    if profile.kind == "trace":
        reqs = load_trace(profile.trace_path, cost_scale=profile.cost_scale).requests
        return [r for r in reqs if r.arrival_time < profile.duration]

    rng = np.random.default_rng(profile.seed)
    peak = profile.peak_rate()
    if peak <= 0:
        return []

    times = []
    t = 0.0
    homogeneous = profile.kind == "steady"
    while True:
        t += rng.exponential(1.0 / peak)
        if t >= profile.duration:
            break
        if homogeneous or rng.random() * peak < profile.rate(t):
            times.append(t)

    costs = _draw_costs(profile.cost, len(times), rng)
    return [Request(i, at, float(c)) for i, (at, c) in enumerate(zip(times, costs))]


@dataclass
class TraceLoad:
    requests: list[Request]
    malformed_rows: list[int]  # 1-based data row numbers

    @property
    def malformed(self) -> int:
        return len(self.malformed_rows)


def load_trace(
    path, schema: str = TRACE_SCHEMA, cost_scale: float = 1.0, max_malformed: float = 0.10
) -> TraceLoad:
    """Read a ``timestamp_s,cpu_request,duration_s[,memory_request]`` CSV.

    Request cost is ``cpu_request * duration_s * cost_scale``. Rows that do
    not parse, or carry non-positive cpu/duration or a negative timestamp,
    are skipped and reported; more than ``max_malformed`` of them is an error.
    """
    if schema != TRACE_SCHEMA:
        raise TraceValidationError(f"unknown trace schema {schema!r}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise TraceValidationError(f"{path}: missing columns {missing}")
        rows = list(reader)

    parsed = []
    bad = []
    for rowno, row in enumerate(rows, start=1):
        try:
            ts = float(row["timestamp_s"])
            cpu = float(row["cpu_request"])
            dur = float(row["duration_s"])
        except (TypeError, ValueError):
            bad.append(rowno)
            continue
        if not (math.isfinite(ts) and math.isfinite(cpu) and math.isfinite(dur)):
            bad.append(rowno)
        elif ts < 0 or cpu <= 0 or dur <= 0:
            bad.append(rowno)
        else:
            parsed.append((ts, cpu * dur * cost_scale))

    if rows and len(bad) > max_malformed * len(rows):
        raise TraceValidationError(
            f"{path}: {len(bad)} of {len(rows)} rows malformed (rows {bad[:20]})"
        )
    if bad:
        log.warning("%s: skipped %d malformed rows", path, len(bad))

    parsed.sort(key=lambda p: p[0])
    return TraceLoad([Request(i, ts, c) for i, (ts, c) in enumerate(parsed)], bad)


# -- cluster ------------------------------------------------------------------


def make_adjacency(n: int, kind: str) -> np.ndarray:
    a = np.zeros((n, n))
    if kind == "full":
        a[:] = 1.0
        np.fill_diagonal(a, 0.0)
    elif kind in ("ring", "path"):
        for i in range(n - 1):
            a[i, i + 1] = a[i + 1, i] = 1.0
        if kind == "ring" and n > 2:
            a[0, n - 1] = a[n - 1, 0] = 1.0
    elif kind != "none":
        raise ValueError(f"unknown adjacency kind {kind!r}")
    return a


Assigner = Callable[["ClusterState", Request], "int | np.ndarray"]


class ClusterState:
    """Nodes, clock and event calendar of one simulation run."""

    def __init__(
        self,
        units: Sequence[int],
        unit_rate: float | Sequence[float] = 1.0,
        adjacency: np.ndarray | None = None,
        min_units: int = 0,
        max_units: int = 64,
        actuation_delay: float = 10.0,
        rng_seed: int = 0,
        max_queue: int | None = None,
        event_log: bool = False,
    ):
        n = len(units)
        rates = np.broadcast_to(np.asarray(unit_rate, dtype=float), (n,))
        if np.any(rates <= 0):
            raise ValueError("unit_rate must be > 0")
        self.nodes = [NodeSpec(i, int(u), float(r)) for i, (u, r) in enumerate(zip(units, rates))]
        self.clock = 0.0
        self.event_calendar: list = []
        self.adjacency = make_adjacency(n, "full") if adjacency is None else np.asarray(adjacency, dtype=float)
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be N x N")
        if not np.array_equal(self.adjacency, self.adjacency.T) or np.any(np.diag(self.adjacency)):
            raise ValueError("adjacency must be symmetric with zero diagonal")
        self.min_units = min_units
        self.max_units = max_units
        self.actuation_delay = actuation_delay
        self.rng_seed = rng_seed
        self.rng = np.random.default_rng(rng_seed)
        self.max_queue = max_queue

        self._seq = 0
        self.scheduled = 0  # handed to submit(), possibly not yet arrived
        self.submitted = 0  # arrived so far
        self.completed: list[Request] = []
        self.rejected: list[Request] = []
        self.audit_log: list[dict] = []
        self.events: list[dict] | None = [] if event_log else None

        self._last_snapshot = 0.0
        self._marks = self._accounting()
        self._n_completed_at_mark = 0
        self._arrivals_since = 0
        self._arrived_work_since = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def units(self) -> np.ndarray:
        return np.array([nd.units for nd in self.nodes])

    def capacities(self) -> np.ndarray:
        return np.array([nd.capacity for nd in self.nodes])

    def loads(self) -> np.ndarray:
        return np.array([nd.load for nd in self.nodes])

    # calendar ----------------------------------------------------------------

    def _push(self, t: float, kind: int, payload) -> None:
        heapq.heappush(self.event_calendar, (t, kind, self._seq, payload))
        self._seq += 1

    def _log(self, kind: str, node: int | None, request_id: int | None) -> None:
        if self.events is not None:
            self.events.append({"t": self.clock, "kind": kind, "node": node, "request_id": request_id})

    def submit(self, requests: Sequence[Request]) -> None:
        for r in requests:
            if r.arrival_time < self.clock:
                raise ValueError(f"request {r.request_id} arrives before the clock")
            self._push(r.arrival_time, ARRIVAL, r)
            self.scheduled += 1

    # service -----------------------------------------------------------------

    def _accrue(self, node: NodeSpec, now: float) -> None:
        dt = now - node.last_update
        if dt > 0:
            node.provisioned_unit_seconds += node.units * dt
            if node.in_service is not None and node.units > 0:
                node.busy_time += dt
                node.busy_unit_seconds += node.units * dt
                done = node.capacity * dt
                node.served_work += done
                node.remaining -= done
        node.last_update = now

    def _schedule_finish(self, node: NodeSpec) -> None:
        node.finish_version += 1
        if node.in_service is not None and node.units > 0:
            remaining = max(node.remaining, 0.0)
            self._push(self.clock + remaining / node.capacity, FINISH, (node.node_id, node.finish_version))

    def _start_next(self, node: NodeSpec) -> None:
        if node.in_service is not None or not node.queue or node.units == 0:
            return
        req = node.queue.popleft()
        req.start_time = self.clock
        node.in_service = req
        node.remaining = req.cost
        self._log("start", node.node_id, req.request_id)
        self._schedule_finish(node)

    def _on_arrival(self, req: Request, assigner: Assigner) -> None:
        self.submitted += 1
        self._arrivals_since += 1
        self._arrived_work_since += req.cost
        choice = assigner(self, req)
        if isinstance(choice, (int, np.integer)):
            idx = int(choice)
        else:
            probs = np.asarray(choice, dtype=float)
            if probs.shape != (self.n_nodes,) or np.any(probs < 0) or not np.isfinite(probs).all():
                raise PolicyError(f"invalid allocation vector {probs!r} at t={self.clock}")
            total = probs.sum()
            if total <= 0:
                raise PolicyError(f"allocation vector sums to {total} at t={self.clock}")
            # categorical draw by inverse CDF
            cdf = np.cumsum(probs / total)
            idx = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
            idx = min(idx, self.n_nodes - 1)
        if not 0 <= idx < self.n_nodes:
            raise PolicyError(
                f"policy routed request {req.request_id} to node {idx}; cluster has {self.n_nodes}"
            )
        node = self.nodes[idx]
        req.assigned_node = idx
        self._log("arrival", idx, req.request_id)
        if not node.accepts_work or (self.max_queue is not None and len(node.queue) >= self.max_queue):
            req.rejected = True
            self.rejected.append(req)
            self._log("reject", idx, req.request_id)
            return
        self._accrue(node, self.clock)
        node.queue.append(req)
        self._start_next(node)

    def _on_finish(self, node_id: int, version: int) -> None:
        node = self.nodes[node_id]
        if version != node.finish_version or node.in_service is None:
            return  # superseded by a rate change
        self._accrue(node, self.clock)
        req = node.in_service
        # absorb float residue so served work matches the request cost exactly
        node.served_work += node.remaining
        node.remaining = 0.0
        req.finish_time = self.clock
        node.in_service = None
        self.completed.append(req)
        self._log("finish", node_id, req.request_id)
        self._start_next(node)

    def _on_actuate(self, plan: tuple[int, ...]) -> None:
        for node, units in zip(self.nodes, plan):
            if units == node.units:
                continue
            self._accrue(node, self.clock)
            node.units = units
            self._log("scale", node.node_id, None)
            if node.in_service is not None:
                self._schedule_finish(node)
            else:
                self._start_next(node)

    def advance(self, until: float, assigner: Assigner | None = None) -> list[Request]:
        """Process every event with time <= ``until``; return requests finished."""
        if until < self.clock:
            raise ValueError(f"cannot advance backwards from {self.clock} to {until}")
        n_done = len(self.completed)
        cal = self.event_calendar
        while cal and cal[0][0] <= until:
            t, kind, _, payload = heapq.heappop(cal)
            self.clock = t
            if kind == FINISH:
                self._on_finish(*payload)
            elif kind == ACTUATE:
                self._on_actuate(payload)
            else:
                if assigner is None:
                    raise PolicyError("arrival pending but no assigner given")
                self._on_arrival(payload, assigner)
        self.clock = until
        return self.completed[n_done:]

    # scaling -----------------------------------------------------------------

    def apply_allocation(self, plan: Sequence[int], delay: float | None = None) -> None:
        """Schedule a per-node resource change ``delay`` seconds from now."""
        plan = tuple(int(u) for u in plan)
        if len(plan) != self.n_nodes:
            raise AllocationError(f"plan has {len(plan)} entries for {self.n_nodes} nodes")
        for i, u in enumerate(plan):
            if not self.min_units <= u <= self.max_units:
                raise AllocationError(
                    f"node {i}: {u} units outside [{self.min_units}, {self.max_units}]"
                )
        self.audit_log.append({"t": self.clock, "plan": list(plan)})
        if plan == tuple(self.units()):
            return
        delay = self.actuation_delay if delay is None else delay
        if delay == 0:
            self._on_actuate(plan)
        else:
            self._push(self.clock + delay, ACTUATE, plan)

    # metrics -----------------------------------------------------------------

    def _accounting(self) -> np.ndarray:
        return np.array(
            [[nd.busy_time, nd.busy_unit_seconds, nd.provisioned_unit_seconds] for nd in self.nodes]
        ).reshape(self.n_nodes, 3)

    def counts(self) -> dict:
        queued = sum(len(nd.queue) for nd in self.nodes)
        in_service = sum(nd.in_service is not None for nd in self.nodes)
        return {
            "submitted": self.submitted,
            "completed": len(self.completed),
            "queued": queued,
            "in_service": in_service,
            "rejected": len(self.rejected),
        }

    def snapshot(self) -> MetricsSample:
        """Per-node metrics since the previous snapshot."""
        for nd in self.nodes:
            self._accrue(nd, self.clock)
        acc = self._accounting()
        delta = acc - self._marks
        interval = self.clock - self._last_snapshot
        if interval > 0:
            util = np.clip(delta[:, 0] / interval, 0.0, 1.0)
        else:
            util = np.zeros(self.n_nodes)
        rts = np.array([r.finish_time - r.arrival_time for r in self.completed[self._n_completed_at_mark :]])
        c = self.counts()
        sample = MetricsSample(
            clock=self.clock,
            interval=interval,
            utilization=util,
            loads=self.loads(),
            queue_lengths=np.array([len(nd.queue) for nd in self.nodes]),
            in_flight=np.array([int(nd.in_service is not None) for nd in self.nodes]),
            units=self.units(),
            capacity=self.capacities(),
            busy_unit_seconds=delta[:, 1],
            provisioned_unit_seconds=delta[:, 2],
            response_times=rts,
            arrivals=self._arrivals_since,
            arrived_work=self._arrived_work_since,
            **c,
        )
        self._marks = acc
        self._last_snapshot = self.clock
        self._n_completed_at_mark = len(self.completed)
        self._arrivals_since = 0
        self._arrived_work_since = 0.0
        return sample

    def served_work(self) -> float:
        return sum(nd.served_work for nd in self.nodes)

    def write_event_log(self, path) -> None:
        if self.events is None:
            raise RuntimeError("event logging was not enabled for this run")
        with open(path, "w") as fh:
            for rec in self.events:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def advance(state: ClusterState, until: float, assigner: Assigner | None = None) -> list[Request]:
    return state.advance(until, assigner)


def apply_allocation(state: ClusterState, plan: Sequence[int], delay: float | None = None) -> ClusterState:
    state.apply_allocation(plan, delay)
    return state


def snapshot(state: ClusterState) -> MetricsSample:
    return state.snapshot()
