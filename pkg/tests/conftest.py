import numpy as np
import pytest

from cloudscale.simcluster import MetricsSample


def make_sample(loads, util, capacity=None, rts=(), interval=1.0, clock=1.0):
    loads = np.asarray(loads, dtype=float)
    n = len(loads)
    capacity = np.ones(n) if capacity is None else np.asarray(capacity, dtype=float)
    return MetricsSample(
        clock=clock, interval=interval, utilization=np.asarray(util, dtype=float), loads=loads,
        queue_lengths=np.maximum(loads - 1, 0), in_flight=np.minimum(loads, 1), units=capacity.astype(int),
        capacity=capacity, busy_unit_seconds=np.zeros(n), provisioned_unit_seconds=np.zeros(n),
        response_times=np.asarray(rts, dtype=float), arrivals=0, arrived_work=0.0,
        submitted=0, completed=0, queued=0, in_service=0, rejected=0,
    )


@pytest.fixture
def sample_factory():
    return make_sample


TWO_NODE_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="session")
def two_node_runs():
    """Train on the two-node scenario once per seed, then evaluate greedily.

    Returns ``(runs, elapsed_s)``; each run holds the fast-node share, the
    critic-loss ratio and the per-episode mean rewards.
    """
    import time

    from cloudscale.harness.config import PolicyBundle, bundled, load_config
    from cloudscale.harness.runner import build_forecaster, simulate, train_agent
    from cloudscale.simcluster import generate_workload

    t0 = time.perf_counter()
    runs = []
    for seed in TWO_NODE_SEEDS:
        cfg = load_config(bundled("two_node.json"), seed=seed)
        res = train_agent(cfg)
        losses = np.array([row[1] for row in res.rows])
        valid = np.flatnonzero(~np.isnan(losses))
        early = losses[valid[100] : valid[100] + 50].mean()
        sim = simulate(cfg, PolicyBundle("ddpg", "ddpg", "static"), generate_workload(cfg.profile("eval")),
                       build_forecaster(cfg), res.agent)
        runs.append({
            "seed": seed,
            "steps": len(res.rows),
            "fast_share": float(np.mean([a[0] for a in sim.balancer.actions])),
            "loss_ratio": float(losses[-50:].mean() / early),
            "episode_rewards": res.episode_rewards,
        })
    return runs, time.perf_counter() - t0


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion."""

    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[criterion] = line
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
