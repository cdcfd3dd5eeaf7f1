"""Hybrid genetic / particle-swarm search over per-node resource plans.

The objective for a plan ``R`` (units per node) is

    sum_i C_i * R_i + lam * max_i L_i(R)

where ``L_i(R)`` is the load a node carries under that plan (lower is
better). A GA phase (roulette selection, single-point crossover, uniform
re-draw mutation, elitism) runs first; its best chromosomes become the
initial particle positions for a PSO phase over continuous positions that
are decoded to integer plans by clamp-and-round.

Populations and swarms are stored as arrays so a whole generation is
evaluated in one vectorised call. All random draws for a generation are
taken in one fixed layout from the run's generator, so results depend only
on the seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

EPS = 1e-9


class ProportionalLoad:
    """Default load model: demand is routed in proportion to units.

    ``L_i(R) = demand * (R_i / sum R) / (R_i * unit_rate_i)`` (utilisation of
    node i). A node with no units receives no demand; a plan with no units at
    all while demand is positive is infeasible (infinite load).
    """

    vectorized = True

    def __init__(self, demand: float, unit_rate: float | Sequence[float] = 1.0):
        if demand < 0:
            raise ValueError("demand must be >= 0")
        self.demand = float(demand)
        self.unit_rate = np.asarray(unit_rate, dtype=float)

    def __call__(self, plans) -> np.ndarray:
        R = np.asarray(plans, dtype=float)
        total = R.sum(axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            loads = self.demand * (R / total) / (R * self.unit_rate)
        loads = np.where(R > 0, loads, 0.0)
        if self.demand > 0:
            loads = np.where(total == 0, np.inf, loads)
        return loads


@dataclass
class FitnessConfig:
    costs: np.ndarray
    lam: float
    load_model: Callable
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float)
        n = len(self.costs)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.int64), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.int64), (n,)).copy()
        if np.any(self.costs <= 0):
            raise ValueError("per-unit costs must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if np.any(self.lower < 0) or np.any(self.lower > self.upper):
            raise ValueError("bounds need 0 <= lower <= upper")

    @property
    def n_nodes(self) -> int:
        return len(self.costs)


def fitness(plan, cfg: FitnessConfig) -> float:
    return float(fitness_many(np.asarray(plan)[None, :], cfg)[0])


def fitness_many(plans: np.ndarray, cfg: FitnessConfig) -> np.ndarray:
    plans = np.asarray(plans)
    if getattr(cfg.load_model, "vectorized", False):
        loads = np.asarray(cfg.load_model(plans), dtype=float)
    else:
        loads = np.array([cfg.load_model(p) for p in plans], dtype=float)
    cost = plans @ cfg.costs
    peak = loads.max(axis=1)
    infeasible = ~np.isfinite(peak)
    out = cost + cfg.lam * np.where(infeasible, 0.0, peak)
    out[infeasible] = np.inf
    return out


@dataclass
class GpsoConfig:
    population_size: int = 40
    ga_generations: int = 30
    crossover_rate: float = 0.9
    mutation_rate: float = 0.05
    elitism_count: int = 2
    swarm_size: int = 20
    pso_iterations: int = 50
    inertia: float = 0.72
    c1: float = 1.49
    c2: float = 1.49
    v_max: float | None = None  # None -> half the bound range per node
    seed: int = 0

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.population_size < 2 or self.swarm_size < 2:
            raise ValueError("population and swarm sizes must be >= 2")
        if not 1 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must be in [1, population_size]")
        if self.swarm_size > self.population_size:
            raise ValueError("swarm_size cannot exceed population_size")


@dataclass
class Chromosome:
    genes: np.ndarray
    fitness: float


@dataclass
class Population:
    genes: np.ndarray  # (P, N) integer plans
    fitness: np.ndarray  # (P,)

    def __len__(self) -> int:
        return len(self.genes)

    def chromosomes(self) -> list[Chromosome]:
        return [Chromosome(g.copy(), float(f)) for g, f in zip(self.genes, self.fitness)]

    def best(self) -> Chromosome:
        i = int(np.argmin(self.fitness))
        return Chromosome(self.genes[i].copy(), float(self.fitness[i]))


def random_population(size: int, fit_cfg: FitnessConfig, rng: np.random.Generator) -> Population:
    genes = rng.integers(fit_cfg.lower, fit_cfg.upper + 1, size=(size, fit_cfg.n_nodes))
    return Population(genes, fitness_many(genes, fit_cfg))


def roulette_weights(f: np.ndarray) -> np.ndarray:
    """Selection weights ``max_f - f + EPS``; infeasible members get zero."""
    finite = np.isfinite(f)
    if not finite.any():
        return np.full(len(f), 1.0 / len(f))
    w = np.where(finite, f[finite].max() - np.where(finite, f, 0.0) + EPS, 0.0)
    return w / w.sum()


def ga_generation(
    pop: Population, cfg: GpsoConfig, fit_cfg: FitnessConfig, rng: np.random.Generator
) -> Population:
    size, n = pop.genes.shape
    order = np.argsort(pop.fitness, kind="stable")
    n_elite = min(cfg.elitism_count, size)
    elite = order[:n_elite]
    n_children = size - n_elite
    if n_children == 0:
        return Population(pop.genes[elite].copy(), pop.fitness[elite].copy())

    n_pairs = math.ceil(n_children / 2)
    parents = rng.choice(size, size=(n_pairs, 2), p=roulette_weights(pop.fitness))
    do_cross = rng.random(n_pairs) < cfg.crossover_rate
    cuts = rng.integers(1, max(n, 2), size=n_pairs)
    mutate = rng.random((2 * n_pairs, n)) < cfg.mutation_rate
    redraw = rng.integers(fit_cfg.lower, fit_cfg.upper + 1, size=(2 * n_pairs, n))

    a = pop.genes[parents[:, 0]]
    b = pop.genes[parents[:, 1]]
    # genes left of the cut come from the first parent
    head = (np.arange(n)[None, :] < cuts[:, None]) | ~do_cross[:, None]
    kids = np.empty((2 * n_pairs, n), dtype=pop.genes.dtype)
    kids[0::2] = np.where(head, a, b)
    kids[1::2] = np.where(head, b, a)
    kids = np.where(mutate, redraw, kids)[:n_children]

    genes = np.vstack([pop.genes[elite], kids])
    fit = np.concatenate([pop.fitness[elite], fitness_many(kids, fit_cfg)])
    return Population(genes, fit)


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    pbest: np.ndarray
    pbest_fitness: float


@dataclass
class Swarm:
    positions: np.ndarray  # (S, N) continuous
    velocities: np.ndarray
    pbest: np.ndarray
    pbest_fitness: np.ndarray
    gbest: np.ndarray
    gbest_fitness: float
    v_max: np.ndarray
    last_speed: float = field(default=0.0)  # max |v| before clamping, last step

    def particles(self) -> list[Particle]:
        return [
            Particle(x.copy(), v.copy(), p.copy(), float(f))
            for x, v, p, f in zip(self.positions, self.velocities, self.pbest, self.pbest_fitness)
        ]


def decode(positions: np.ndarray, fit_cfg: FitnessConfig) -> np.ndarray:
    """Clamp to bounds, then round half up."""
    x = np.clip(positions, fit_cfg.lower, fit_cfg.upper)
    return np.floor(x + 0.5).astype(np.int64)


def default_v_max(cfg: GpsoConfig, fit_cfg: FitnessConfig) -> np.ndarray:
    if cfg.v_max is not None:
        return np.full(fit_cfg.n_nodes, float(cfg.v_max))
    return (fit_cfg.upper - fit_cfg.lower) / 2.0


def seed_swarm(
    pop: Population,
    swarm_size: int,
    cfg: GpsoConfig,
    fit_cfg: FitnessConfig,
    rng: np.random.Generator,
) -> Swarm:
    if swarm_size > len(pop):
        raise ValueError("swarm_size cannot exceed the population size")
    top = np.argsort(pop.fitness, kind="stable")[:swarm_size]
    x = pop.genes[top].astype(float)
    v_max = default_v_max(cfg, fit_cfg)
    v = rng.uniform(-v_max / 10.0, v_max / 10.0, size=x.shape)
    f = pop.fitness[top].copy()
    g = int(np.argmin(f))
    return Swarm(x, v, x.copy(), f, x[g].copy(), float(f[g]), v_max)


def pso_step(
    swarm: Swarm,
    cfg: GpsoConfig,
    fit_cfg: FitnessConfig,
    rng: np.random.Generator | None = None,
    r: np.ndarray | None = None,
) -> Swarm:
    """One velocity/position update; ``r`` optionally pins (r1, r2) per particle."""
    x, v = swarm.positions, swarm.velocities
    if r is None:
        r = rng.random((len(x), 2))
    r = np.asarray(r, dtype=float).reshape(len(x), 2)
    r1, r2 = r[:, :1], r[:, 1:]
    v_new = (
        cfg.inertia * v
        + cfg.c1 * r1 * (swarm.pbest - x)
        + cfg.c2 * r2 * (swarm.gbest[None, :] - x)
    )
    last_speed = float(np.abs(v_new).max()) if v_new.size else 0.0
    v_new = np.clip(v_new, -swarm.v_max, swarm.v_max)
    x_new = x + v_new

    f = fitness_many(decode(x_new, fit_cfg), fit_cfg)
    better = f < swarm.pbest_fitness
    pbest = np.where(better[:, None], x_new, swarm.pbest)
    pbest_f = np.where(better, f, swarm.pbest_fitness)
    gbest, gbest_f = swarm.gbest, swarm.gbest_fitness
    i = int(np.argmin(pbest_f))
    if pbest_f[i] < gbest_f:
        gbest, gbest_f = pbest[i].copy(), float(pbest_f[i])
    return Swarm(x_new, v_new, pbest, pbest_f, gbest, gbest_f, swarm.v_max, last_speed)


@dataclass
class TracePoint:
    iteration: int
    phase: str
    best_fitness: float
    best_plan: tuple[int, ...]


@dataclass
class GpsoResult:
    plan: np.ndarray
    fitness: float
    trace: list[TracePoint]


def optimize(cfg: GpsoConfig, fit_cfg: FitnessConfig) -> GpsoResult:
    """GA for ``ga_generations``, then PSO seeded from it; returns the best plan seen."""
    rng = np.random.default_rng(cfg.seed)
    pop = random_population(cfg.population_size, fit_cfg, rng)
    best = pop.best()
    best_plan, best_f = best.genes, best.fitness
    trace = [TracePoint(0, "ga", best_f, tuple(int(u) for u in best_plan))]

    def note(it: int, phase: str, plan, f: float):
        nonlocal best_plan, best_f
        if f < best_f:
            best_plan, best_f = np.asarray(plan).copy(), f
        trace.append(TracePoint(it, phase, best_f, tuple(int(u) for u in best_plan)))

    it = 0
    for _ in range(cfg.ga_generations):
        pop = ga_generation(pop, cfg, fit_cfg, rng)
        it += 1
        b = pop.best()
        note(it, "ga", b.genes, b.fitness)

    swarm = seed_swarm(pop, cfg.swarm_size, cfg, fit_cfg, rng)
    for _ in range(cfg.pso_iterations):
        swarm = pso_step(swarm, cfg, fit_cfg, rng)
        it += 1
        note(it, "pso", decode(swarm.gbest, fit_cfg), swarm.gbest_fitness)

    return GpsoResult(np.asarray(best_plan, dtype=np.int64), float(best_f), trace)


def enumerate_optimum(fit_cfg: FitnessConfig) -> tuple[np.ndarray, float]:
    """Exhaustive search over every plan in the bounds (small spaces only)."""
    axes = [np.arange(lo, hi + 1) for lo, hi in zip(fit_cfg.lower, fit_cfg.upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, fit_cfg.n_nodes)
    f = fitness_many(grid, fit_cfg)
    i = int(np.argmin(f))
    return grid[i], float(f[i])


def write_trace_csv(trace: Sequence[TracePoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "phase", "best_fitness", "best_plan"])
        for p in trace:
            w.writerow([p.iteration, p.phase, repr(p.best_fitness), " ".join(map(str, p.best_plan))])
