"""Scenario execution: single runs, policy comparisons and agent training."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..autoscale_gpso import write_trace_csv
from ..balancer_rl import DdpgAgent
from ..forecast import LoadSeries, MovingAverageForecaster, fit_forecaster
from ..metrics_report import (
    RunSummary,
    aggregate_run,
    emit_csv,
    emit_summary_table,
    emit_svg_chart,
)
from ..simcluster import ClusterState, generate_workload
from .config import PolicyBundle, ScenarioConfig, substream_seed
from .policies import (
    DdpgBalancer,
    DemandFeed,
    Gpso,
    Hpa,
    LeastConnections,
    Rbas,
    RoundRobin,
    Static,
)

log = logging.getLogger(__name__)


@dataclass
class SimResult:
    policy: str
    samples: list
    state: ClusterState
    summary: RunSummary
    arrival_digest: str
    balancer: object = None
    autoscaler: object = None


def arrival_digest(requests) -> str:
    h = hashlib.sha256()
    for r in requests:
        h.update(f"{r.request_id},{r.arrival_time!r},{r.cost!r}\n".encode())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_forecaster(cfg: ScenarioConfig):
    """Fit the demand model on an independent realisation of the workload."""
    fc = cfg.forecast
    if cfg.forecast_model == "moving-average" or fc.epochs == 0:
        return MovingAverageForecaster(fc.window, fc.horizon)
    duration = cfg.forecast_history or cfg.workload["duration"]
    dt = cfg.sample_interval
    n_bins = int(math.ceil(duration / dt))
    if n_bins < fc.window + fc.horizon + 1:
        log.warning("forecast history too short for a trained model; using a moving average")
        return MovingAverageForecaster(fc.window, fc.horizon)
    reqs = generate_workload(cfg.profile("forecast-history", duration))
    counts = np.zeros(n_bins)
    for r in reqs:
        counts[min(int(r.arrival_time // dt), n_bins - 1)] += 1
    return fit_forecaster(LoadSeries.from_rates(counts / dt, dt), fc)


def make_state(cfg: ScenarioConfig, event_log: bool = False, routing_seed: str = "routing") -> ClusterState:
    c = cfg.cluster
    return ClusterState(
        units=c.initial_units,
        unit_rate=c.unit_rate,
        adjacency=c.adjacency,
        min_units=c.min_units,
        max_units=c.max_units,
        actuation_delay=c.actuation_delay,
        rng_seed=substream_seed(cfg.seed, routing_seed),
        max_queue=c.max_queue,
        event_log=event_log,
    )


def make_autoscaler(cfg: ScenarioConfig, kind: str):
    if kind == "static":
        return Static()
    if kind == "hpa":
        return Hpa(cfg.hpa, cfg.hpa_interval)
    if kind == "rbas":
        return Rbas(cfg.rbas_rules, cfg.rbas_interval)
    if kind == "gpso":
        return Gpso(cfg.gpso, cfg.gpso_lam, cfg.gpso_interval, cfg.cluster.unit_cost, cfg.cluster.unit_rate)
    raise ValueError(f"unknown autoscaler {kind!r}")


def make_balancer(cfg: ScenarioConfig, kind: str, agent: DdpgAgent | None, training: bool = False):
    if kind == "round-robin":
        return RoundRobin(cfg.cluster.n)
    if kind == "least-connections":
        return LeastConnections()
    if kind in ("ddpg", "shared-ddpg"):
        if agent is None:
            raise ValueError(f"balancer {kind!r} needs an agent")
        return DdpgBalancer(agent, cfg.reward, training=training, shared=kind == "shared-ddpg",
                            train_every=cfg.agent_train["train_every"])
    raise ValueError(f"unknown balancer {kind!r}")


def simulate(
    cfg: ScenarioConfig,
    bundle: PolicyBundle,
    requests,
    forecaster,
    agent: DdpgAgent | None = None,
    training: bool = False,
    event_log: bool = False,
    duration: float | None = None,
    routing_seed: str = "routing",
) -> SimResult:
    duration = cfg.workload["duration"] if duration is None else duration
    dt = cfg.sample_interval
    state = make_state(cfg, event_log, routing_seed)
    state.submit(requests)
    balancer = make_balancer(cfg, bundle.balancer, agent, training)
    autoscaler = make_autoscaler(cfg, bundle.autoscaler)
    feed = DemandFeed(forecaster, cfg.forecast.window, cfg.forecast.horizon)

    samples = [state.snapshot()]
    balancer.observe(samples[0], feed)
    n_main = int(math.ceil(duration / dt - 1e-9))
    n_max = n_main + int(math.ceil(cfg.drain / dt - 1e-9))
    for k in range(n_max):
        if k >= n_main:
            c = state.counts()
            if c["queued"] == 0 and c["in_service"] == 0 and not state.event_calendar:
                break
        state.advance((k + 1) * dt, balancer.assign)
        sample = state.snapshot()
        samples.append(sample)
        feed.observe(sample)
        balancer.observe(sample, feed)
        autoscaler.observe(state, sample, feed, k)

    summary = aggregate_run(samples, bundle.name, cfg.cluster.unit_cost)
    return SimResult(bundle.name, samples, state, summary, arrival_digest(requests), balancer, autoscaler)


# -- agent training -----------------------------------------------------------


TRAIN_HEADER = ["step", "critic_loss", "actor_objective", "reward"]


@dataclass
class TrainResult:
    agent: DdpgAgent
    best_agent: DdpgAgent
    rows: list = field(default_factory=list)  # (step, critic_loss, actor_objective, reward)
    episode_rewards: list = field(default_factory=list)


def _training_bundle(cfg: ScenarioConfig) -> PolicyBundle:
    for b in cfg.policies:
        if b.balancer in ("ddpg", "shared-ddpg"):
            return PolicyBundle(b.name, "ddpg", b.autoscaler)
    return PolicyBundle("ddpg+static", "ddpg", "static")


def train_agent(
    cfg: ScenarioConfig,
    forecaster=None,
    agent: DdpgAgent | None = None,
    episodes: int | None = None,
    start_episode: int = 0,
    start_step: int = 0,
) -> TrainResult:
    """Train against fresh workload realisations, one per episode."""
    forecaster = build_forecaster(cfg) if forecaster is None else forecaster
    agent = DdpgAgent(cfg.agent, cfg.cluster.adjacency) if agent is None else agent
    episodes = cfg.agent_train["episodes"] if episodes is None else episodes
    duration = cfg.agent_train["episode_duration"] or cfg.workload["duration"]
    bundle = _training_bundle(cfg)

    result = TrainResult(agent, DdpgAgent.from_json(agent.to_json()))
    best = -math.inf
    step = start_step
    for ep in range(start_episode, start_episode + episodes):
        reqs = generate_workload(cfg.profile(f"train-episode-{ep}", duration))
        sim = simulate(cfg, bundle, reqs, forecaster, agent, training=True, duration=duration,
                       routing_seed=f"train-routing-{ep}")
        for crit, obj, r in sim.balancer.rows:
            step += 1
            result.rows.append((step, crit, obj, r))
        mean_r = float(np.mean(sim.balancer.rewards)) if sim.balancer.rewards else 0.0
        result.episode_rewards.append(mean_r)
        if mean_r > best:
            best = mean_r
            result.best_agent = DdpgAgent.from_json(agent.to_json())
        log.info("episode %d: mean reward %.4f", ep, mean_r)
    return result


def write_train_csv(rows, path, append: bool = False) -> None:
    new = not append or not Path(path).exists()
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(TRAIN_HEADER)
        for step, crit, obj, r in rows:
            w.writerow([step, f"{crit:.6f}", f"{obj:.6f}", f"{r:.6f}"])


def _save_checkpoint(agent: DdpgAgent, path, meta: dict) -> None:
    obj = agent.to_json()
    obj["meta"] = meta
    with open(path, "w") as fh:
        json.dump(obj, fh)


def _load_checkpoint(path) -> tuple[DdpgAgent, dict]:
    with open(path) as fh:
        obj = json.load(fh)
    return DdpgAgent.from_json(obj), obj.get("meta", {})


def train_command(cfg: ScenarioConfig, out_dir=None, resume: bool = False) -> dict:
    """Train the agent and write checkpoints plus ``train.csv``.

    ``agent_last.json`` carries the step and episode counters, so a resumed
    run continues the CSV numbering where the previous one stopped.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    last_path, best_path, csv_path = out / "agent_last.json", out / "agent_best.json", out / "train.csv"

    agent, meta = None, {"episodes": 0, "step": 0, "best_reward": None}
    if resume and last_path.exists():
        agent, meta = _load_checkpoint(last_path)
    elif cfg.agent_train["episodes"] == 0:
        agent = DdpgAgent(cfg.agent, cfg.cluster.adjacency, init="zeros")
    forecaster = build_forecaster(cfg)
    res = train_agent(cfg, forecaster, agent, start_episode=meta["episodes"], start_step=meta["step"])

    write_train_csv(res.rows, csv_path, append=resume and csv_path.exists())
    episodes_done = meta["episodes"] + len(res.episode_rewards)
    step = res.rows[-1][0] if res.rows else meta["step"]
    best_reward = meta.get("best_reward")
    if res.episode_rewards and (best_reward is None or max(res.episode_rewards) > best_reward):
        best_reward = max(res.episode_rewards)
        _save_checkpoint(res.best_agent, best_path, {"episodes": episodes_done, "step": step, "best_reward": best_reward})
    elif not best_path.exists():
        _save_checkpoint(res.agent, best_path, {"episodes": episodes_done, "step": step, "best_reward": best_reward})
    _save_checkpoint(res.agent, last_path, {"episodes": episodes_done, "step": step, "best_reward": best_reward})
    return {"checkpoint": str(best_path), "last": str(last_path), "train_csv": str(csv_path),
            "episodes": episodes_done, "steps": step, "episode_rewards": res.episode_rewards}


# -- scenario / comparison ----------------------------------------------------


def _agent_for(cfg: ScenarioConfig, bundles, forecaster) -> DdpgAgent | None:
    if not any(b.balancer in ("ddpg", "shared-ddpg") for b in bundles):
        return None
    ckpt = cfg.agent_train["checkpoint"]
    if ckpt:
        return _load_checkpoint(cfg.base_dir / ckpt)[0]
    if cfg.agent_train["episodes"] > 0:
        return train_agent(cfg, forecaster).best_agent
    log.warning("no checkpoint and no training episodes configured; using an untrained agent")
    return DdpgAgent(cfg.agent, cfg.cluster.adjacency)


def _write_run(cfg: ScenarioConfig, res: SimResult, out: Path, event_log: bool) -> dict:
    metrics = out / "metrics.csv"
    emit_csv([res.summary], metrics)
    outputs = {"metrics.csv": file_digest(metrics)}
    if event_log:
        res.state.write_event_log(out / "events.jsonl")
        outputs["events.jsonl"] = file_digest(out / "events.jsonl")
    if isinstance(res.autoscaler, Gpso) and res.autoscaler.traces:
        write_trace_csv(res.autoscaler.traces[-1], out / "gpso_trace.csv")
        outputs["gpso_trace.csv"] = file_digest(out / "gpso_trace.csv")
    return outputs


def _manifest(cfg: ScenarioConfig, policies, digests, outputs) -> dict:
    return {
        "scenario": cfg.name,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "code_version": __version__,
        "policies": policies,
        "arrival_sha256": digests,
        "outputs": outputs,
    }


def run_scenario(cfg: ScenarioConfig, out_dir=None, policy: str | None = None, event_log: bool = False) -> SimResult:
    """Run one bundle (the first listed unless ``policy`` names another)."""
    bundles = cfg.policies
    bundle = bundles[0] if policy is None else next((b for b in bundles if b.name == policy), None)
    if bundle is None:
        raise ValueError(f"no policy named {policy!r} in the config")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    forecaster = build_forecaster(cfg)
    agent = _agent_for(cfg, [bundle], forecaster)
    requests = generate_workload(cfg.profile())
    res = simulate(cfg, bundle, requests, forecaster, agent, event_log=event_log)
    outputs = _write_run(cfg, res, out, event_log)
    manifest = _manifest(cfg, [bundle.name], {bundle.name: res.arrival_digest}, outputs)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return res


@dataclass
class Comparison:
    results: list
    table: list
    paths: dict


def compare_policies(cfg: ScenarioConfig, out_dir=None, event_log: bool = False, agent: DdpgAgent | None = None) -> Comparison:
    """Run every bundle on the same arrivals; emit CSVs and three charts."""
    if len(cfg.policies) < 2:
        raise ValueError("comparison needs at least two policy bundles")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    forecaster = build_forecaster(cfg)
    agent = agent or _agent_for(cfg, cfg.policies, forecaster)
    requests = generate_workload(cfg.profile())

    results = []
    for bundle in cfg.policies:
        # fresh copies so no bundle sees another's mutations
        reqs = [type(r)(r.request_id, r.arrival_time, r.cost) for r in requests]
        a = DdpgAgent.from_json(agent.to_json()) if agent is not None else None
        res = simulate(cfg, bundle, reqs, forecaster, a, event_log=event_log)
        results.append(res)
        if event_log:
            res.state.write_event_log(out / f"events_{bundle.name}.jsonl")

    summaries = [r.summary for r in results]
    paths = {"metrics": out / "comparison.csv", "summary": out / "summary.csv"}
    emit_csv(summaries, paths["metrics"])
    table = emit_summary_table(summaries, paths["summary"])
    for metric in ("utilization", "response_time", "scaling_efficiency"):
        paths[metric] = out / f"{metric}.svg"
        emit_svg_chart(summaries, metric, paths[metric])

    outputs = {p.name: file_digest(p) for p in paths.values()}
    manifest = _manifest(cfg, [b.name for b in cfg.policies], {r.policy: r.arrival_digest for r in results}, outputs)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Comparison(results, table, paths)
