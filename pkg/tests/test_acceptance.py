"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""

import filecmp
import math
import time

import numpy as np
import pytest

from cloudscale import _layers
from cloudscale.autoscale_gpso import (
    FitnessConfig,
    GpsoConfig,
    ProportionalLoad,
    Swarm,
    enumerate_optimum,
    optimize,
    pso_step,
)
from cloudscale.balancer_rl import Batch, DdpgAgent, DdpgConfig, StateVector, critic_names
from cloudscale.baselines import (
    HpaConfig,
    RbasRule,
    hpa_desired_replicas,
    least_connections_assign,
    rbas_decide,
    round_robin_assign,
)
from cloudscale.harness.config import bundled, load_config
from cloudscale.harness.runner import compare_policies
from cloudscale.metrics_report import check_conservation
from cloudscale.numgrad import finite_diff_check
from cloudscale.simcluster import make_adjacency

SEEDS = (0, 1, 2, 3, 4)
BUNDLED = ("smoke.json", "two_node.json", "bursty_hetero.json", "diurnal_high.json", "trace_replay.json")


def test_criterion_01_gradient_soundness(report):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        n = int(rng.integers(1, 6))
        horizon = int(rng.integers(1, 4))
        hidden = [int(w) for w in rng.integers(1, 9, size=rng.integers(1, 3))]
        cfg = DdpgConfig(gcn_depth=int(rng.integers(1, 3)), gcn_width=int(rng.integers(1, 9)), hidden=hidden,
                         activation="tanh", horizon=horizon, gamma=0.9, batch_size=3, replay_capacity=8, seed=k)
        agent = DdpgAgent(cfg, make_adjacency(n, str(rng.choice(["full", "ring", "path"]))))
        b = 3
        batch = Batch(rng.uniform(0, 1, (b, n, 3)), rng.uniform(0, 1, (b, horizon)), rng.dirichlet(np.ones(n), b),
                      rng.normal(size=b), rng.uniform(0, 1, (b, n, 3)), rng.uniform(0, 1, (b, horizon)))
        y = agent.td_targets(batch)
        names = critic_names(cfg)

        def f(ps):
            p = _layers.as_constants(agent.params)
            p.update(dict(zip(names, ps)))
            return agent._critic_loss(p, batch, y)

        worst = max(worst, finite_diff_check(f, [agent.params[nm] for nm in names], h=1e-5))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10.0
    report(1, ok, f"max rel err {worst:.2e} over 20 configs in {elapsed:.1f}s")
    assert ok


def test_criterion_02_simplex_invariant(report):
    worst_sum, worst_min, count = 0.0, math.inf, 0
    for n in (1, 2, 4, 8, 16):
        rng = np.random.default_rng(n)
        agent = DdpgAgent(DdpgConfig(gcn_width=8, hidden=[8], noise_start=3.0, noise_decay_steps=2000, seed=n),
                          make_adjacency(n, "ring"))
        for _ in range(2000):
            x = rng.uniform(0, 1, (n, 3))
            x[:, [0, 2]] *= rng.choice([1.0, 100.0])  # large loads push logits far apart
            s = StateVector(x[:, 0], x[:, 1], rng.uniform(0, 1, 4), x)
            a = agent.act(s, explore=True).fractions
            worst_sum = max(worst_sum, abs(a.sum() - 1.0))
            worst_min = min(worst_min, a.min())
            count += 1
    ok = count == 10_000 and worst_sum <= 1e-9 and worst_min >= 0
    report(2, ok, f"{count} actions, max |sum-1| {worst_sum:.1e}, min entry {worst_min:.2e}")
    assert ok


def _gpso_problem(k):
    rng = np.random.default_rng(500 + k)
    return FitnessConfig(costs=rng.uniform(0.5, 2.0, 3), lam=(0.0, 1.0, 10.0)[k % 3],
                         load_model=ProportionalLoad(rng.uniform(1, 6), rng.uniform(0.5, 2.0, 3)), lower=1, upper=5)


def test_criterion_03_gpso_matches_enumeration(report):
    t0 = time.perf_counter()
    hits = 0
    for k in range(100):
        fc = _gpso_problem(k)
        _, best = enumerate_optimum(fc)
        res = optimize(GpsoConfig(seed=k), fc)
        hits += math.isclose(res.fitness, best, rel_tol=1e-12, abs_tol=1e-12)
    elapsed = time.perf_counter() - t0
    ok = hits >= 95 and elapsed < 5.0
    report(3, ok, f"{hits}/100 runs reach the enumerated optimum in {elapsed:.1f}s")
    assert ok


def test_criterion_04_gpso_monotone_trace(report):
    monotone = 0
    for k in range(100):
        fc = _gpso_problem(k)
        res = optimize(GpsoConfig(seed=10_000 + k, elitism_count=1 + k % 3), fc)
        vals = [p.best_fitness for p in res.trace]
        monotone += all(b <= a for a, b in zip(vals, vals[1:]))
    report(4, monotone == 100, f"{monotone}/100 traces non-increasing")
    assert monotone == 100


def test_criterion_05_ddpg_learns_two_node(report, two_node_runs):
    runs, elapsed = two_node_runs
    share = float(np.median([r["fast_share"] for r in runs]))
    ratio = float(np.median([r["loss_ratio"] for r in runs]))
    steps = max(r["steps"] for r in runs)
    ok = share > 0.6 and ratio < 0.5 and steps <= 5000 and elapsed < 120.0
    report(5, ok, f"median fast-node share {share:.3f}, median loss ratio {ratio:.3f}, "
                  f"{steps} steps/seed, {elapsed:.0f}s")
    assert ok


def test_criterion_06_bursty_reproduction(report, tmp_path):
    rt_red, var_red = [], []
    for seed in SEEDS:
        comp = compare_policies(load_config(bundled("bursty_hetero.json"), seed=seed), tmp_path / str(seed))
        rows = {r["policy"]: r for r in comp.table}
        ddpg, rr = rows["ddpg+gpso"], rows["rr+static"]
        rt_red.append(1.0 - ddpg["rt_mean"] / rr["rt_mean"])
        var_red.append(1.0 - ddpg["util_var"] / rr["util_var"])
    rt, var = float(np.median(rt_red)), float(np.median(var_red))
    ok = rt >= 0.15 and var >= 0.20
    report(6, ok, f"median RT reduction {rt:.1%}, median util-variance reduction {var:.1%} "
                  f"(per seed RT {[round(x, 3) for x in rt_red]}, var {[round(x, 3) for x in var_red]})")
    assert ok


def test_criterion_07_diurnal_scaling_efficiency(report, tmp_path):
    eff = {"lc+gpso": [], "lc+rbas": [], "lc+hpa": [], "lc+static": []}
    for seed in SEEDS:
        comp = compare_policies(load_config(bundled("diurnal_high.json"), seed=seed), tmp_path / str(seed))
        for r in comp.table:
            eff[r["policy"]].append(r["scale_eff"])
    med = {k: float(np.median(v)) for k, v in eff.items()}
    ok = med["lc+gpso"] > med["lc+rbas"] and med["lc+hpa"] > med["lc+static"]
    report(7, ok, "median efficiency " + ", ".join(f"{k} {v:.3f}" for k, v in med.items()))
    assert ok


def test_criterion_08_conservation_and_determinism(report, tmp_path):
    bad = []
    for name in BUNDLED:
        cfg = load_config(bundled(name))
        a = compare_policies(cfg, tmp_path / name / "a")
        b = compare_policies(cfg, tmp_path / name / "b")
        for res in a.results + b.results:
            for s in res.samples:
                check_conservation(s)
        if not filecmp.cmp(a.paths["metrics"], b.paths["metrics"], shallow=False):
            bad.append(name)
    report(8, not bad, f"{len(BUNDLED)} scenarios conserve requests; CSV mismatches: {bad or 'none'}")
    assert not bad


def test_criterion_09_baseline_examples(report):
    checks = []
    counter, cycle = 0, []
    for _ in range(4):
        node, counter = round_robin_assign(counter, 3)
        cycle.append(node)
    checks.append(cycle == [0, 1, 2, 0])
    checks.append(round_robin_assign(5, 1)[0] == 0)
    checks.append(least_connections_assign([3, 1, 2]) == 1)
    checks.append(least_connections_assign([2, 2]) == 0)
    checks.append(least_connections_assign([0, 0, 0]) == 0)
    checks.append(hpa_desired_replicas(4, 0.9, HpaConfig(target_utilization=0.6)) == 6)
    checks.append(hpa_desired_replicas(3, 0.6, HpaConfig(target_utilization=0.6)) == 3)
    checks.append(hpa_desired_replicas(2, 0.1, HpaConfig(target_utilization=0.5, min_replicas=1)) == 1)
    rule = RbasRule(upper_threshold=0.8, lower_threshold=0.3, scale_delta=2, cooldown_s=30.0)
    checks.append(rbas_decide(0.5, 3, [rule])[0] == 0)
    delta, state = rbas_decide(0.9, 3, [rule], now=0.0)
    checks.append(delta == 2)
    checks.append(rbas_decide(0.9, 5, [rule], now=10.0, state=state)[0] == 0)
    checks.append(rbas_decide(0.6, 5, [rule], now=40.0, state=state)[0] == 0)
    ok = all(checks)
    report(9, ok, f"{sum(checks)}/{len(checks)} baseline examples exact")
    assert ok


@pytest.mark.parametrize("n", [3])
def test_criterion_10_pso_decay_law(report, n):
    rng = np.random.default_rng(10)
    fc = FitnessConfig(costs=np.ones(n), lam=1.0, load_model=ProportionalLoad(2.0), lower=1, upper=5)
    cfg = GpsoConfig(inertia=0.5, c1=0.0, c2=0.0, v_max=math.inf)
    x = rng.uniform(1, 5, (4, n))
    swarm = Swarm(x, rng.normal(size=(4, n)) * 3, x.copy(), np.full(4, math.inf), x[0].copy(), math.inf,
                  np.full(n, math.inf))
    prev, exact = float(np.abs(swarm.velocities).max()), 0
    for _ in range(20):
        swarm = pso_step(swarm, cfg, fc, rng)
        exact += swarm.last_speed == prev * 0.5
        prev = swarm.last_speed
    report(10, exact == 20, f"{exact}/20 steps halve max|v| exactly")
    assert exact == 20
