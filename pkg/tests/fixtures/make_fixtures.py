"""Regenerate the seeded regression fixtures (run from the repo root)."""

import json
from pathlib import Path

import numpy as np

from cloudscale.autoscale_gpso import FitnessConfig, GpsoConfig, ProportionalLoad, ga_generation, random_population
from cloudscale.balancer_rl import Batch, DdpgAgent, DdpgConfig
from cloudscale.simcluster import make_adjacency

HERE = Path(__file__).parent


def ga_setup():
    fit_cfg = FitnessConfig(costs=np.array([1.0, 2.0]), lam=4.0, load_model=ProportionalLoad(3.0, [1.0, 2.0]),
                            lower=1, upper=6)
    cfg = GpsoConfig(population_size=4, elitism_count=1, swarm_size=2, crossover_rate=0.9, mutation_rate=0.2)
    return cfg, fit_cfg


def ga_run():
    cfg, fit_cfg = ga_setup()
    rng = np.random.default_rng(1234)
    pop = random_population(4, fit_cfg, rng)
    nxt = ga_generation(pop, cfg, fit_cfg, rng)
    return pop, nxt


def synthetic_batch(seed: int, b: int = 32) -> Batch:
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (b, 2, 3))
    f = rng.uniform(0, 1, (b, 4))
    a = rng.dirichlet([1, 1], b)
    r = -2.0 * (x[:, :, 0] * a).sum(axis=1) - np.abs(a[:, 0] - 0.75)
    return Batch(x, f, a, r, rng.uniform(0, 1, (b, 2, 3)), rng.uniform(0, 1, (b, 4)))


def train_run(seed: int, steps: int = 500) -> list[float]:
    cfg = DdpgConfig(gamma=0.5, critic_lr=1e-3, actor_lr=1e-3, batch_size=32, seed=seed)
    agent = DdpgAgent(cfg, make_adjacency(2, "full"))
    batch = synthetic_batch(seed)
    return [agent.train_step(batch)[0] for _ in range(steps)]


if __name__ == "__main__":
    pop, nxt = ga_run()
    (HERE / "ga_pop4.json").write_text(json.dumps(
        {"parents": pop.genes.tolist(), "offspring": nxt.genes.tolist(), "fitness": nxt.fitness.tolist()}, indent=1))
    runs = {str(s): (lambda L: {"step100": L[99], "step500": L[-1]})(train_run(s)) for s in range(5)}
    (HERE / "train_step_500.json").write_text(json.dumps(runs, indent=1))
