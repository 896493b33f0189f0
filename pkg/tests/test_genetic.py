"""Tests for the genetic optimizer over per-unit intervention strengths."""

import numpy as np
import pytest

import stochint.effects
from stochint.data import DgpConfig, generate_ihdp_like
from stochint.effects import (
    NuisanceSpec,
    OutcomeSpec,
    PropensitySpec,
    UnitRecords,
)
from stochint.genetic import (
    GaConfig,
    InterventionVector,
    crossover,
    fitness,
    initialize_population,
    mutate,
    optimize,
    optimize_records,
    select_parents,
)
from stochint.nuisance import OutcomeConfig

from conftest import oracle_records


def vec(values, lo=0.0, hi=10.0):
    return InterventionVector(np.asarray(values, dtype=float), lo, hi)


# ---------------------------------------------------------------------------
# containers and configuration
# ---------------------------------------------------------------------------


def test_intervention_vector_validation():
    v = vec([0.0, 5.0, 10.0])
    assert v.n == 3
    with pytest.raises(ValueError, match="within"):
        vec([-0.1, 5.0])
    with pytest.raises(ValueError, match="within"):
        vec([10.5])
    with pytest.raises(ValueError, match="finite"):
        InterventionVector(np.array([np.nan]))
    with pytest.raises(ValueError, match="1-d"):
        InterventionVector(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="lo < hi"):
        InterventionVector(np.array([1.0]), lo=2.0, hi=1.0)


def test_intervention_vector_is_read_only():
    v = vec([1.0, 2.0])
    with pytest.raises(ValueError):
        v.deltas[0] = 9.0


def test_ga_config_validation():
    with pytest.raises(ValueError, match="even"):
        GaConfig(population_size=7)
    with pytest.raises(ValueError, match="even"):
        GaConfig(population_size=2)
    with pytest.raises(ValueError, match="generations"):
        GaConfig(generations=0)
    with pytest.raises(ValueError, match="crossover_rate"):
        GaConfig(crossover_rate=1.5)
    with pytest.raises(ValueError, match="mutation_rate"):
        GaConfig(mutation_rate=-0.1)
    with pytest.raises(ValueError, match="elitism"):
        GaConfig(population_size=4, elitism_count=4)
    with pytest.raises(ValueError, match="tournament"):
        GaConfig(tournament_size=1)
    with pytest.raises(ValueError, match="operator"):
        GaConfig(crossover_operator="blend")
    with pytest.raises(ValueError, match="sbx_eta"):
        GaConfig(sbx_eta=0.0)
    with pytest.raises(ValueError, match="bounds"):
        GaConfig(bounds=(5.0, 5.0))


# ---------------------------------------------------------------------------
# fitness
# ---------------------------------------------------------------------------


def handmade_records():
    return UnitRecords(
        unit_index=np.arange(2),
        treatments=np.array([1, 0]),
        outcomes=np.array([2.0, 1.0]),
        mu0=np.array([0.2, 1.0]),
        mu1=np.array([1.0, 0.5]),
        p_hat=np.array([0.5, 0.5]),
    )


def test_fitness_hand_computed_value():
    records = handmade_records()
    # m1 = (3, 0.5), m0 = (0.2, 1.0); at delta = 1 both q equal 0.5
    # phi = (0.5*3 + 0.5*0.2, 0.5*0.5 + 0.5*1.0) = (1.6, 0.75)
    got = fitness(vec([1.0, 1.0]), records)
    assert abs(got - 2.35) <= 1e-12
    # raw arrays are accepted too
    assert fitness(np.array([1.0, 1.0]), records) == got


def test_fitness_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        fitness(vec([1.0, 1.0, 1.0]), handmade_records())


def test_fitness_rejects_non_finite_value():
    records = UnitRecords(
        unit_index=np.arange(1),
        treatments=np.array([1]),
        outcomes=np.array([1e308]),
        mu0=np.array([0.0]),
        mu1=np.array([-1e308]),
        p_hat=np.array([0.5]),
    )
    with np.errstate(over="ignore"), pytest.raises(ValueError, match="non-finite"):
        fitness(vec([1.0]), records)


def test_optimize_records_error_names_individual():
    records = UnitRecords(
        unit_index=np.arange(1),
        treatments=np.array([1]),
        outcomes=np.array([1e308]),
        mu0=np.array([0.0]),
        mu1=np.array([-1e308]),
        p_hat=np.array([0.5]),
    )
    with np.errstate(over="ignore"), pytest.raises(ValueError, match="individual 0"):
        optimize_records(records, GaConfig(population_size=4, generations=1))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def test_initialize_population_shape_bounds_determinism():
    cfg = GaConfig(population_size=12, seed=3)
    pop_a = initialize_population(25, cfg)
    pop_b = initialize_population(25, cfg)
    assert len(pop_a) == 12
    for ind_a, ind_b in zip(pop_a, pop_b):
        assert ind_a.n == 25
        assert ind_a.deltas.min() >= 0.0 and ind_a.deltas.max() <= 10.0
        assert np.array_equal(ind_a.deltas, ind_b.deltas)
    pop_c = initialize_population(25, GaConfig(population_size=12, seed=4))
    assert not np.array_equal(pop_a[0].deltas, pop_c[0].deltas)
    with pytest.raises(ValueError):
        initialize_population(0, cfg)


def test_initialize_population_clamps_at_zero():
    # mean 1, std 1 puts a sizable mass below zero; clamping must hold
    cfg = GaConfig(population_size=50, seed=0)
    pop = initialize_population(40, cfg)
    stacked = np.stack([ind.deltas for ind in pop])
    assert stacked.min() == 0.0
    assert stacked.max() <= 10.0


def test_tournament_prefers_high_fitness():
    rng = np.random.default_rng(5)
    cfg = GaConfig(population_size=10, tournament_size=3)
    population = [vec(np.full(3, float(i))) for i in range(10)]
    fits = np.arange(10, dtype=float)  # individual 9 dominates
    parents = select_parents(population, fits, cfg, rng)
    assert len(parents) == 10
    picked = np.array([p.deltas[0] for p in parents])
    assert picked.mean() > 6.0  # order statistics of best-of-3 from 0..9
    with pytest.raises(ValueError, match="one fitness"):
        select_parents(population, fits[:4], cfg, rng)


def test_sbx_children_preserve_parent_sum():
    cfg = GaConfig(crossover_rate=1.0, crossover_operator="sbx")
    rng = np.random.default_rng(6)
    parent_rng = np.random.default_rng(7)
    for _ in range(200):
        a = vec(parent_rng.uniform(3.0, 7.0, 8))
        b = vec(parent_rng.uniform(3.0, 7.0, 8))
        c1, c2 = crossover(a, b, cfg, rng)
        assert np.allclose(c1.deltas + c2.deltas, a.deltas + b.deltas, atol=1e-9)


def test_sbx_identical_parents_produce_identical_children():
    # identical up to floating-point rounding in the symmetric blend
    cfg = GaConfig(crossover_rate=1.0)
    rng = np.random.default_rng(8)
    a = vec(np.full(6, 4.2))
    c1, c2 = crossover(a, a, cfg, rng)
    assert np.allclose(c1.deltas, a.deltas, rtol=0.0, atol=1e-12)
    assert np.allclose(c2.deltas, a.deltas, rtol=0.0, atol=1e-12)


def test_crossover_rate_zero_copies_parents():
    cfg = GaConfig(crossover_rate=0.0)
    rng = np.random.default_rng(9)
    a = vec([1.0, 2.0, 3.0])
    b = vec([4.0, 5.0, 6.0])
    c1, c2 = crossover(a, b, cfg, rng)
    assert np.array_equal(c1.deltas, a.deltas)
    assert np.array_equal(c2.deltas, b.deltas)


def test_uniform_crossover_swaps_coordinates():
    cfg = GaConfig(crossover_rate=1.0, crossover_operator="uniform")
    rng = np.random.default_rng(10)
    a = vec(np.arange(1.0, 9.0))
    b = vec(np.arange(1.0, 9.0) + 0.5)
    c1, c2 = crossover(a, b, cfg, rng)
    for i in range(8):
        pair = sorted([c1.deltas[i], c2.deltas[i]])
        assert pair == sorted([a.deltas[i], b.deltas[i]])
    # with 8 coordinates at swap probability one half, both patterns appear
    assert not np.array_equal(c1.deltas, a.deltas)
    assert not np.array_equal(c1.deltas, b.deltas)


def test_crossover_draw_count_is_rate_independent():
    # downstream randomness must not depend on which coordinates mixed
    a = vec(np.full(5, 2.0))
    b = vec(np.full(5, 8.0))
    after = []
    for rate in (0.0, 1.0):
        rng = np.random.default_rng(11)
        crossover(a, b, GaConfig(crossover_rate=rate), rng)
        after.append(rng.random())
    assert after[0] == after[1]


def test_crossover_children_respect_bounds():
    cfg = GaConfig(crossover_rate=1.0, sbx_eta=1.0)
    rng = np.random.default_rng(12)
    a = vec(np.full(30, 0.2))
    b = vec(np.full(30, 9.8))
    for _ in range(50):
        c1, c2 = crossover(a, b, cfg, rng)
        for c in (c1, c2):
            assert c.deltas.min() >= 0.0 and c.deltas.max() <= 10.0


def test_crossover_length_mismatch():
    with pytest.raises(ValueError, match="equal length"):
        crossover(vec([1.0]), vec([1.0, 2.0]), GaConfig(), np.random.default_rng(0))


def test_mutate_rate_zero_is_identity():
    rng = np.random.default_rng(13)
    a = vec([1.0, 2.0, 3.0])
    out = mutate(a, GaConfig(mutation_rate=0.0), rng)
    assert np.array_equal(out.deltas, a.deltas)


def test_mutate_rate_one_redraws_uniformly():
    # Kolmogorov-Smirnov against uniform(0, 10) at alpha = 0.01
    n = 10000
    rng = np.random.default_rng(14)
    a = vec(np.full(n, 5.0))
    out = mutate(a, GaConfig(mutation_rate=1.0), rng)
    assert not np.array_equal(out.deltas, a.deltas)
    sample = np.sort(out.deltas) / 10.0
    grid = np.arange(1, n + 1) / n
    d_stat = max(
        np.max(grid - sample),
        np.max(sample - (np.arange(n) / n)),
    )
    assert d_stat < 1.6276 / np.sqrt(n)


def test_mutate_respects_bounds_and_determinism():
    a = vec(np.linspace(0.0, 10.0, 50))
    out1 = mutate(a, GaConfig(mutation_rate=0.5), np.random.default_rng(15))
    out2 = mutate(a, GaConfig(mutation_rate=0.5), np.random.default_rng(15))
    assert np.array_equal(out1.deltas, out2.deltas)
    assert out1.deltas.min() >= 0.0 and out1.deltas.max() <= 10.0


# ---------------------------------------------------------------------------
# the optimizer loop
# ---------------------------------------------------------------------------


def test_optimizer_pushes_monotone_records_to_upper_bound():
    records = oracle_records(10, seed=16)
    cfg = GaConfig(population_size=20, generations=50, seed=1)
    best, trace = optimize_records(records, cfg)
    assert best.deltas.mean() >= 8.5
    assert fitness(best, records) >= fitness(np.ones(10), records)


def test_elitism_makes_best_fitness_non_decreasing():
    records = oracle_records(15, seed=17)
    cfg = GaConfig(population_size=16, generations=40, seed=2)
    _, trace = optimize_records(records, cfg)
    assert trace.generations == 40
    assert (np.diff(trace.best_fitness) >= 0).all()
    assert np.isfinite(trace.mean_fitness).all()


def test_optimizer_is_deterministic():
    records = oracle_records(12, seed=18)
    cfg = GaConfig(population_size=10, generations=15, seed=3)
    best_a, trace_a = optimize_records(records, cfg)
    best_b, trace_b = optimize_records(records, cfg)
    assert np.array_equal(best_a.deltas, best_b.deltas)
    assert np.array_equal(trace_a.best_fitness, trace_b.best_fitness)
    assert np.array_equal(trace_a.mean_fitness, trace_b.mean_fitness)


def test_snapshot_cadence():
    records = oracle_records(8, seed=19)
    cfg = GaConfig(population_size=6, generations=25, seed=4)
    _, trace = optimize_records(records, cfg, snapshot_every=10)
    assert [gen for gen, _ in trace.snapshots] == [0, 10, 20]
    _, trace_off = optimize_records(records, cfg)
    assert trace_off.snapshots == ()


def test_optimize_fits_nuisances_once_per_fold(monkeypatch):
    calls = {"outcome": 0, "propensity": 0}
    real_outcome = stochint.effects.fit_outcome
    real_propensity = stochint.effects.fit_propensity

    def counting_outcome(*args, **kwargs):
        calls["outcome"] += 1
        return real_outcome(*args, **kwargs)

    def counting_propensity(*args, **kwargs):
        calls["propensity"] += 1
        return real_propensity(*args, **kwargs)

    monkeypatch.setattr(stochint.effects, "fit_outcome", counting_outcome)
    monkeypatch.setattr(stochint.effects, "fit_propensity", counting_propensity)

    data = generate_ihdp_like(
        60, 3, seed=20, config=DgpConfig(treated_fraction_target=0.4)
    )
    spec = NuisanceSpec(
        propensity=PropensitySpec(basis_kind="raw"),
        outcome=OutcomeSpec(config=OutcomeConfig(kind="ridge_linear")),
    )
    cfg = GaConfig(population_size=6, generations=8, seed=5)
    best, trace = optimize(data, cfg, nuisance=spec, k=3, seed=0)
    assert best.n == 60
    assert trace.generations == 8
    assert calls == {"outcome": 3, "propensity": 3}
