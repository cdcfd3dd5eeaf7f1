"""Scenario config loading and validation."""

from __future__ import annotations

import copy
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ..autoscale_gpso import GpsoConfig
from ..balancer_rl import DdpgConfig, RewardConfig
from ..baselines import HpaConfig, RbasRule
from ..forecast import ForecastConfig
from ..simcluster import WorkloadProfile, make_adjacency

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid scenario config; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, constraint: str):
        super().__init__(f"{key}: {constraint}")
        self.key = key
        self.constraint = constraint


def load_schema() -> dict:
    text = resources.files("cloudscale.scenarios").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def substream_seed(seed: int, name: str) -> int:
    """Independent seed for a named component, derived from the run seed."""
    ss = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        return ConfigError(f"{path}.{missing}" if path else missing, "required key is missing")
    if err.validator == "additionalProperties":
        return ConfigError(path or "<root>", f"unknown key ({err.message})")
    return ConfigError(path or "<root>", err.message)


@dataclass
class PolicyBundle:
    name: str
    balancer: str
    autoscaler: str


@dataclass
class ClusterConfig:
    n: int
    unit_rate: np.ndarray
    unit_cost: np.ndarray
    initial_units: np.ndarray
    min_units: int
    max_units: int
    adjacency: np.ndarray
    actuation_delay: float
    max_queue: int | None


@dataclass
class ScenarioConfig:
    raw: dict
    name: str
    seed: int
    cluster: ClusterConfig
    workload: dict
    sample_interval: float
    drain: float
    policies: list
    reward: RewardConfig
    agent: DdpgConfig
    agent_train: dict
    gpso: GpsoConfig
    gpso_lam: float
    gpso_interval: int
    hpa: HpaConfig
    hpa_interval: int
    rbas_rules: list
    rbas_interval: int
    forecast_model: str
    forecast: ForecastConfig
    forecast_history: float
    output_dir: str
    base_dir: Path = field(default_factory=Path.cwd)

    def profile(self, name: str = "workload", duration: float | None = None) -> WorkloadProfile:
        w = dict(self.workload)
        if duration is not None:
            w["duration"] = duration
        if w.get("trace_path"):
            w["trace_path"] = str((self.base_dir / w["trace_path"]).resolve())
        return WorkloadProfile(**w, seed=substream_seed(self.seed, name))

    def digest(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _per_node(value, n: int, key: str, dtype=float) -> np.ndarray:
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        return np.full(n, arr, dtype=dtype)
    if arr.shape != (n,):
        raise ConfigError(key, f"expected a scalar or a list of {n} values, got {len(arr)}")
    return arr


def _build(raw: dict, base_dir: Path) -> ScenarioConfig:
    c = raw["cluster"]
    n = c["N"]
    min_u, max_u = c.get("min_units", 1), c.get("max_units", 8)
    if min_u > max_u:
        raise ConfigError("cluster.min_units", f"must be <= cluster.max_units ({max_u})")
    units = _per_node(c.get("initial_units", max(min_u, 1)), n, "cluster.initial_units", int)
    if np.any(units < min_u) or np.any(units > max_u):
        raise ConfigError("cluster.initial_units", f"must lie in [{min_u}, {max_u}]")
    adj_spec = c.get("adjacency", "full")
    if isinstance(adj_spec, dict):
        adj = np.loadtxt(base_dir / adj_spec["file"], delimiter=",", ndmin=2)
        if adj.shape != (n, n) or not np.array_equal(adj, adj.T) or np.any(np.diag(adj)):
            raise ConfigError("cluster.adjacency.file", f"must hold a symmetric {n}x{n} 0/1 matrix with zero diagonal")
    else:
        adj = make_adjacency(n, adj_spec)
    cluster = ClusterConfig(
        n=n,
        unit_rate=_per_node(c.get("unit_rate", 1.0), n, "cluster.unit_rate"),
        unit_cost=_per_node(c.get("unit_cost", 1.0), n, "cluster.unit_cost"),
        initial_units=units,
        min_units=min_u,
        max_units=max_u,
        adjacency=adj,
        actuation_delay=c.get("actuation_delay", 10.0),
        max_queue=c.get("max_queue"),
    )

    w = dict(raw["workload"])
    if w["kind"] == "trace" and "trace_path" not in w:
        raise ConfigError("workload.trace_path", "required when workload.kind is 'trace'")
    cost = w.get("cost", {"kind": "constant", "value": 1.0})
    if cost["kind"] == "constant" and "value" not in cost:
        raise ConfigError("workload.cost.value", "required for constant costs")
    if cost["kind"] == "uniform":
        if "low" not in cost or "high" not in cost:
            raise ConfigError("workload.cost", "uniform costs need low and high")
        if cost["low"] > cost["high"]:
            raise ConfigError("workload.cost.low", "must be <= workload.cost.high")

    policies = []
    for i, p in enumerate(raw["policies"]):
        name = p.get("name", f"{p['balancer']}+{p['autoscaler']}")
        if any(q.name == name for q in policies):
            raise ConfigError(f"policies.{i}.name", f"duplicate policy name {name!r}")
        policies.append(PolicyBundle(name, p["balancer"], p["autoscaler"]))

    fc = dict(raw.get("forecast", {}))
    forecast_model = fc.pop("model", "feedforward")
    forecast_history = fc.pop("history_duration", None)
    forecast = ForecastConfig(seed=substream_seed(raw.get("seed", 0), "forecast"), **fc)

    ag = dict(raw.get("agent", {}))
    agent_train = {
        "episodes": ag.pop("episodes", 0),
        "episode_duration": ag.pop("episode_duration", None),
        "train_every": ag.pop("train_every", 1),
        "checkpoint": ag.pop("checkpoint", None),
    }
    agent = DdpgConfig(horizon=forecast.horizon, seed=substream_seed(raw.get("seed", 0), "agent"), **ag)

    gp = dict(raw.get("gpso", {}))
    gpso_lam = gp.pop("lam", 10.0)
    gpso_interval = gp.pop("interval_steps", 6)
    gpso = GpsoConfig(seed=substream_seed(raw.get("seed", 0), "gpso"), **gp)

    hp = dict(raw.get("hpa", {}))
    hpa_interval = hp.pop("interval_steps", 15)
    hp.setdefault("min_replicas", n * min_u)
    hp.setdefault("max_replicas", n * max_u)
    hpa = HpaConfig(**hp)

    rb = dict(raw.get("rbas", {}))
    rules = [RbasRule(**r) for r in rb.get("rules", [{}])]

    return ScenarioConfig(
        raw=raw,
        name=raw.get("name", "scenario"),
        seed=raw.get("seed", 0),
        cluster=cluster,
        workload=w,
        sample_interval=raw.get("sample_interval", 1.0),
        drain=raw.get("drain", 0.0),
        policies=policies,
        reward=RewardConfig(**raw.get("reward", {})),
        agent=agent,
        agent_train=agent_train,
        gpso=gpso,
        gpso_lam=gpso_lam,
        gpso_interval=gpso_interval,
        hpa=hpa,
        hpa_interval=hpa_interval,
        rbas_rules=rules,
        rbas_interval=rb.get("interval_steps", 5),
        forecast_model=forecast_model,
        forecast=forecast,
        forecast_history=forecast_history,
        output_dir=raw.get("output_dir", f"runs/{raw.get('name', 'scenario')}"),
        base_dir=base_dir,
    )


def parse_config(raw: dict, base_dir: Path | str = ".", seed: int | None = None) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        raise _schema_error(errors[0])
    try:
        return _build(raw, Path(base_dir))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("<config>", str(exc)) from exc


def load_config(path, seed: int | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw, path.parent, seed)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``bundled('smoke.json')``."""
    return Path(str(resources.files("cloudscale.scenarios").joinpath(name)))
