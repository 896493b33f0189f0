"""Genetic search for per-unit intervention strengths.

Candidate solutions are vectors of per-unit deltas inside box bounds.  The
fitness of a candidate is the summed influence value over the sample, with
nuisance predictions computed once up front and reused for every evaluation.
Variation uses tournament selection, simulated-binary or uniform crossover,
uniform-redraw mutation, and elitism (which makes the best-fitness trace
non-decreasing).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ObservationalDataset
from .effects import (
    NuisanceSpec,
    UnitRecords,
    cross_fit_records,
    influence,
    m_term,
    stochastic_propensity,
)

CROSSOVER_OPERATORS = ("sbx", "uniform")


@dataclass(frozen=True, eq=False)
class InterventionVector:
    """Per-unit intervention strengths constrained to [lo, hi]."""

    deltas: np.ndarray
    lo: float = 0.0
    hi: float = 10.0

    def __post_init__(self):
        d = np.ascontiguousarray(np.asarray(self.deltas, dtype=float))
        if d.ndim != 1 or d.shape[0] < 1:
            raise ValueError("deltas must be a nonempty 1-d array")
        if not np.isfinite(d).all():
            raise ValueError("deltas must be finite")
        if not (self.lo < self.hi and np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError("need finite bounds with lo < hi")
        if (d < self.lo).any() or (d > self.hi).any():
            raise ValueError("deltas must lie within [lo, hi]")
        d.flags.writeable = False
        object.__setattr__(self, "deltas", d)

    @property
    def n(self) -> int:
        return self.deltas.shape[0]


@dataclass(frozen=True)
class GaConfig:
    """Settings for the genetic optimizer.

    population_size must be even (pairing for crossover) and >= 4.
    mutation_scale is reserved for non-uniform mutation operators; the
    uniform redraw implemented here does not consult it.
    """

    population_size: int = 50
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.05
    mutation_scale: float = 1.0
    elitism_count: int = 2
    tournament_size: int = 3
    crossover_operator: str = "sbx"
    sbx_eta: float = 15.0
    init_mean: float = 1.0
    init_std: float = 1.0
    bounds: tuple[float, float] = (0.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 4 or self.population_size % 2 != 0:
            raise ValueError("population_size must be even and >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for name in ("crossover_rate", "mutation_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_scale <= 0:
            raise ValueError("mutation_scale must be > 0")
        if not 0 <= self.elitism_count < self.population_size:
            raise ValueError("elitism_count must lie in [0, population_size)")
        if not 2 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [2, population_size]")
        if self.crossover_operator not in CROSSOVER_OPERATORS:
            raise ValueError(f"unknown crossover operator {self.crossover_operator!r}")
        if self.sbx_eta <= 0:
            raise ValueError("sbx_eta must be > 0")
        if self.init_std <= 0:
            raise ValueError("init_std must be > 0")
        lo, hi = self.bounds
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError("bounds must be finite with lo < hi")
        object.__setattr__(self, "bounds", (float(lo), float(hi)))


@dataclass(frozen=True, eq=False)
class GaTrace:
    """Per-generation fitness history and optional best-vector snapshots."""

    best_fitness: np.ndarray
    mean_fitness: np.ndarray
    snapshot_every: int = 0
    snapshots: tuple[tuple[int, InterventionVector], ...] = ()

    @property
    def generations(self) -> int:
        return self.best_fitness.shape[0]


def fitness(individual, records: UnitRecords) -> float:
    """Summed influence value of a per-unit delta vector over the records.

    Raises:
        ValueError: length mismatch between the vector and the records, or a
            non-finite fitness value.
    """
    deltas = individual.deltas if isinstance(individual, InterventionVector) \
        else np.asarray(individual, dtype=float)
    if deltas.shape != (records.n,):
        raise ValueError(
            f"delta vector has length {deltas.shape}, records have {records.n} units"
        )
    p = records.require_p_hat()
    q = stochastic_propensity(p, deltas)
    m1 = m_term(records.treatments, records.outcomes, records.mu1, p, 1)
    m0 = m_term(records.treatments, records.outcomes, records.mu0, p, 0)
    value = float(np.sum(influence(q, m1, m0)))
    if not np.isfinite(value):
        raise ValueError("non-finite fitness value")
    return value


def initialize_population(n: int, config: GaConfig,
                          rng: np.random.Generator | None = None
                          ) -> list[InterventionVector]:
    """Draw population_size vectors ~ normal(init_mean, init_std), clamped."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    lo, hi = config.bounds
    draws = rng.normal(config.init_mean, config.init_std,
                       (config.population_size, n))
    return [InterventionVector(np.clip(row, lo, hi), lo, hi) for row in draws]


def select_parents(population: list[InterventionVector], fitnesses,
                   config: GaConfig,
                   rng: np.random.Generator) -> list[InterventionVector]:
    """Tournament selection with replacement; returns population_size parents."""
    fits = np.asarray(fitnesses, dtype=float)
    m = len(population)
    if fits.shape != (m,):
        raise ValueError("need one fitness per individual")
    parents = []
    for _ in range(m):
        entrants = rng.integers(0, m, size=config.tournament_size)
        winner = entrants[int(np.argmax(fits[entrants]))]
        parents.append(population[int(winner)])
    return parents


def _sbx_children(a: np.ndarray, b: np.ndarray, u: np.ndarray,
                  eta: float) -> tuple[np.ndarray, np.ndarray]:
    exponent = 1.0 / (eta + 1.0)
    beta = np.where(u <= 0.5,
                    (2.0 * u) ** exponent,
                    (1.0 / (2.0 * (1.0 - u))) ** exponent)
    c1 = 0.5 * ((1.0 + beta) * a + (1.0 - beta) * b)
    c2 = 0.5 * ((1.0 - beta) * a + (1.0 + beta) * b)
    return c1, c2


def crossover(parent_a: InterventionVector, parent_b: InterventionVector,
              config: GaConfig, rng: np.random.Generator
              ) -> tuple[InterventionVector, InterventionVector]:
    """Recombine two parents; coordinates mix with probability crossover_rate.

    The "sbx" operator is simulated binary crossover with distribution index
    sbx_eta (children symmetric about the parent mean); "uniform" swaps each
    selected coordinate with probability 0.5.  Children are clamped to the
    parents' bounds.  The rng draw count is fixed, so downstream draws do not
    depend on which coordinates mixed.
    """
    a, b = parent_a.deltas, parent_b.deltas
    if a.shape != b.shape:
        raise ValueError("parents must have equal length")
    n = a.shape[0]
    lo, hi = config.bounds
    apply_mask = rng.random(n) < config.crossover_rate
    u = rng.random(n)
    if config.crossover_operator == "sbx":
        c1, c2 = _sbx_children(a, b, u, config.sbx_eta)
    else:
        swap = u < 0.5
        c1 = np.where(swap, b, a)
        c2 = np.where(swap, a, b)
    child1 = np.where(apply_mask, c1, a)
    child2 = np.where(apply_mask, c2, b)
    return (
        InterventionVector(np.clip(child1, lo, hi), lo, hi),
        InterventionVector(np.clip(child2, lo, hi), lo, hi),
    )


def mutate(individual: InterventionVector, config: GaConfig,
           rng: np.random.Generator) -> InterventionVector:
    """Redraw each coordinate uniformly in [lo, hi] with mutation_rate."""
    n = individual.n
    lo, hi = config.bounds
    mask = rng.random(n) < config.mutation_rate
    redraw = rng.uniform(lo, hi, n)
    return InterventionVector(np.where(mask, redraw, individual.deltas), lo, hi)


def optimize_records(records: UnitRecords, config: GaConfig | None = None,
                     snapshot_every: int = 0
                     ) -> tuple[InterventionVector, GaTrace]:
    """Run the genetic search against precomputed unit records.

    Nuisances are whatever the records carry; no fitting happens here, so
    fitness evaluation is pure and cheap.

    Returns:
        (best vector of the final generation, per-generation trace).
    """
    cfg = config or GaConfig()
    rng = np.random.default_rng(cfg.seed)
    population = initialize_population(records.n, cfg, rng)
    m = cfg.population_size
    best_hist = np.empty(cfg.generations)
    mean_hist = np.empty(cfg.generations)
    snapshots = []
    best_vector = population[0]
    for gen in range(cfg.generations):
        fits = np.empty(m)
        for i, ind in enumerate(population):
            try:
                fits[i] = fitness(ind, records)
            except ValueError as err:
                raise ValueError(f"individual {i}: {err}") from None
        order = np.argsort(-fits, kind="stable")
        best_vector = population[int(order[0])]
        best_hist[gen] = fits[order[0]]
        mean_hist[gen] = fits.mean()
        if snapshot_every and gen % snapshot_every == 0:
            snapshots.append((gen, best_vector))
        if gen == cfg.generations - 1:
            break
        elites = [population[int(i)] for i in order[:cfg.elitism_count]]
        parents = select_parents(population, fits, cfg, rng)
        children = []
        for i in range(0, m, 2):
            c1, c2 = crossover(parents[i], parents[i + 1], cfg, rng)
            children.append(mutate(c1, cfg, rng))
            children.append(mutate(c2, cfg, rng))
        population = elites + children[: m - cfg.elitism_count]
    trace = GaTrace(
        best_fitness=best_hist,
        mean_fitness=mean_hist,
        snapshot_every=snapshot_every,
        snapshots=tuple(snapshots),
    )
    return best_vector, trace


def optimize(data: ObservationalDataset, config: GaConfig | None = None,
             nuisance: NuisanceSpec | None = None, k: int = 5, seed: int = 0,
             snapshot_every: int = 0) -> tuple[InterventionVector, GaTrace]:
    """Cross-fit nuisances once, then genetically search per-unit deltas.

    Args:
        data: observational sample; one delta is optimized per unit.
        config: GaConfig (defaults: population 50, 100 generations, SBX).
        nuisance: propensity/outcome settings for the one-time cross-fit.
        k: cross-fitting folds.
        seed: fold-assignment seed (the GA itself draws from config.seed).
        snapshot_every: record the best vector every this many generations
            (0 disables snapshots).

    Returns:
        (best vector, trace).
    """
    records, _ = cross_fit_records(data, k, seed, nuisance or NuisanceSpec())
    return optimize_records(records, config, snapshot_every)
