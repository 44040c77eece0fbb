import logging
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from eqsearch.benchmarks import generate_lotka_volterra
from eqsearch.evaluation import Problem
from eqsearch.model import (CoordinateFamily, DerivativeFamily, Equation, SystemChromosome,
                            TokenPool, TrigFamily, random_equation, shape_in, structural_equal)
from eqsearch.moeadd import (Individual, MoeaddConfig, Normalizer, assign_region, crossover,
                             crossover_equations, das_dennis_weights, mating_selection, mutate,
                             nondominated_sort, pbi, run, select_removal, update_population)
from eqsearch.preprocess import build_cache
from eqsearch.solver import PENALTY

from conftest import d, pool_2d, term


def dummy_chromosome(k=0):
    eq = Equation((term(d(0, 1, 0)), term(d(0, 0, k + 1))), 0, 0.1)
    return SystemChromosome((eq,))


def individual(objs, region=0, k=0):
    return Individual(dummy_chromosome(k), np.asarray(objs, dtype=float), region)


# -- configuration ------------------------------------------------------------------------


def test_config_validation_and_population_size():
    cfg = MoeaddConfig(H=7)
    assert cfg.population_size(2) == 8
    assert MoeaddConfig(H=2).population_size(4) == 10
    for bad in (dict(H=0), dict(theta=0), dict(delta=1.5), dict(epochs=-1), dict(n_parents=1),
                dict(sparsity_interval=(1.0, 0.1))):
        with pytest.raises(ValueError):
            MoeaddConfig(**bad)
    assert cfg.neighborhood_size(8) == 2
    assert MoeaddConfig(neighborhood=50).neighborhood_size(8) == 7


# -- decomposition ------------------------------------------------------------------------


def test_das_dennis_examples():
    w = das_dennis_weights(2, 1)
    assert sorted(tuple(v.components) for v in w) == [(0.0, 1.0), (1.0, 0.0)]
    w = das_dennis_weights(2, 4)
    assert sorted(tuple(v.components) for v in w) == [(0.0, 1.0), (0.25, 0.75), (0.5, 0.5),
                                                      (0.75, 0.25), (1.0, 0.0)]
    assert len(das_dennis_weights(4, 4)) == 35
    with pytest.raises(ValueError):
        das_dennis_weights(2, 0)


@pytest.mark.parametrize("m", [2, 4, 6])
@pytest.mark.parametrize("H", range(1, 7))
def test_das_dennis_count_law(m, H):
    w = das_dennis_weights(m, H)
    assert len(w) == math.comb(H + m - 1, m - 1)
    T = min(max(2, math.ceil(len(w) / 5)), len(w) - 1)
    for i, v in enumerate(w):
        assert abs(v.components.sum() - 1.0) < 1e-12
        assert np.all(v.components >= 0)
        assert i not in v.neighbor_ids and len(v.neighbor_ids) == T


def test_neighbors_are_nearest():
    w = das_dennis_weights(2, 4, T=2)
    middle = next(i for i, v in enumerate(w) if np.allclose(v.components, 0.5))
    nbrs = sorted(tuple(w[j].components) for j in w[middle].neighbor_ids)
    assert nbrs == [(0.25, 0.75), (0.75, 0.25)]


def test_pbi_examples():
    g, d1, d2 = pbi((1.0, 1.0), (1.0, 0.0), 1.0)
    assert (g, d1, d2) == (2.0, 1.0, 1.0)
    g, d1, d2 = pbi((2.0, 2.0), (0.5, 0.5), 5.0)
    assert d2 == pytest.approx(0.0, abs=1e-15) and g == pytest.approx(d1)
    assert d1 == pytest.approx(np.sqrt(8))
    assert pbi((0.3, 0.4), (0.2, 0.8), 4.0, ideal_point=(0.3, 0.4))[0] == 0.0
    # objectives below the ideal point are clamped
    assert pbi((0.1, 0.1), (1.0, 0.0), 4.0, ideal_point=(0.3, 0.4))[0] == 0.0
    with pytest.raises(ValueError):
        pbi((1.0, 1.0), (0.0, 0.0), 1.0)


def test_nondominated_sort_on_individuals():
    pop = [individual((3, 3)), individual((1, 1)), individual((2, 2)), individual((0, 5))]
    assert nondominated_sort(pop) == [[1, 3], [2], [0]]
    assert nondominated_sort([]) == []


def test_normalizer_ignores_penalised_members():
    pop = [individual((2.0, 4.0)), individual((1.0, 8.0)), individual((PENALTY, 1.0))]
    norm = Normalizer(pop)
    np.testing.assert_allclose(norm.scale, [2.0, 8.0])
    weights = das_dennis_weights(2, 4)
    r = assign_region((0.0, 4.0), weights, norm)
    assert np.allclose(weights[r].components, (0.0, 1.0))


# -- mating -------------------------------------------------------------------------------


def test_mating_within_region_neighbourhood(rng):
    weights = das_dennis_weights(2, 7)
    pop = [individual((i, 10 - i), region=3) for i in range(8)]
    pop[0].region_id = 0
    pop[7].region_id = 7
    allowed = {3} | set(weights[3].neighbor_ids)
    for _ in range(200):
        parents = mating_selection(3, pop, 1.0, 2, rng, weights)
        assert all(p.region_id in allowed for p in parents)
        assert parents[0] is not parents[1]


def test_mating_tops_up_from_population(rng):
    weights = das_dennis_weights(2, 7)
    pop = [individual((i, 10 - i), region=7) for i in range(8)]
    pop[0].region_id = 0
    parents = mating_selection(0, pop, 1.0, 3, rng, weights)
    assert pop[0] in parents and len({id(p) for p in parents}) == 3


def test_mating_global_sampling_is_uniform(rng):
    pop = [individual((i, 10 - i), region=i) for i in range(8)]
    counts = np.zeros(8)
    for _ in range(10000):
        for p in mating_selection(0, pop, 0.0, 2, rng):
            counts[pop.index(p)] += 1
    assert chisquare(counts).pvalue > 0.01


def test_mating_with_more_parents_than_individuals(rng, caplog):
    pop = [individual((1, 2)), individual((2, 1))]
    with caplog.at_level(logging.INFO, logger="eqsearch.moeadd"):
        parents = mating_selection(0, pop, 0.5, 5, rng)
    assert len(parents) == 5 and all(p in pop for p in parents)
    assert "with replacement" in caplog.text
    with pytest.raises(ValueError):
        mating_selection(0, [], 0.5, 2, rng)


# -- crossover ------------------------------------------------------------------------------


def test_crossover_of_identical_parents(rng):
    pool = pool_2d()
    eq = random_equation(pool, 0, 4, 2, rng)
    a = SystemChromosome((eq,))
    b = SystemChromosome((eq.unfitted(),))
    ca, cb = crossover(a, b, pool, rng, 1.0, 1.0)
    assert structural_equal(ca, a) and structural_equal(cb, a)
    assert ca.equations[0].sparsity == pytest.approx(eq.sparsity)
    assert cb.equations[0].sparsity == pytest.approx(eq.sparsity)


def test_crossover_exchanges_disjoint_complements(rng):
    pool = pool_2d()
    ta = (term(d(0, 1, 0)), term(d(0, 0, 1)), term(d(0, 0, 2)))
    tb = (term(d(0, 0, 3)), term(d(0, 0, 0), d(0, 0, 1)), term(d(0, 0, 0), d(0, 1, 0)))
    a = Equation(ta, 0, 1e-3)
    b = Equation(tb, 1, 1e-1)
    ca, cb = crossover_equations(a, b, pool, rng, term_swap_prob=1.0, factor_swap_prob=0.0)
    assert structural_equal(ca, b) and structural_equal(cb, a)
    assert 1e-3 <= ca.sparsity <= 1e-1 and 1e-3 <= cb.sparsity <= 1e-1
    assert ca.sparsity + cb.sparsity == pytest.approx(a.sparsity + b.sparsity)


def test_crossover_shared_terms_stay_put(rng):
    pool = pool_2d()
    shared = term(d(0, 1, 0))
    a = Equation((shared, term(d(0, 0, 1))), 0, 0.1)
    b = Equation((term(d(0, 0, 2)), shared), 1, 0.1)
    ca, cb = crossover_equations(a, b, pool, rng, 1.0, 0.0)
    assert ca.terms[0] == shared and cb.terms[1] == shared


def test_crossover_fuzz_preserves_invariants():
    rng = np.random.default_rng(11)
    pool = TokenPool([DerivativeFamily(("u", "v"), ("t", "x"), (1, 2), cross_derivatives=False),
                      CoordinateFamily(("t", "x")), TrigFamily(("t", "x"))])
    for _ in range(10000):
        a = SystemChromosome(tuple(random_equation(pool, v, 4, 3, rng) for v in range(2)))
        b = SystemChromosome(tuple(random_equation(pool, v, 4, 3, rng) for v in range(2)))
        for child in crossover(a, b, pool, rng, 0.7, 0.7):
            for v, eq in enumerate(child.equations):
                eq.check_invariants(max_factors=3)
                assert eq.variable == v
                for i, t in enumerate(eq.terms):
                    assert not shape_in(t, eq.terms[i + 1:])
                    assert all(pool.allows(f, v) for f in t.factors)


def test_crossover_rejects_mismatched_parents(rng):
    pool = pool_2d()
    with pytest.raises(ValueError):
        crossover_equations(Equation((term(d(0, 1, 0)),), 0, 0.1),
                            Equation((term(d(0, 1, 0)),), 0, 0.1, variable=1), pool, rng)


# -- mutation ---------------------------------------------------------------------------------


def test_mutation_against_single_member_population(rng):
    pool = pool_2d(coordinate=True)
    chrom = SystemChromosome((random_equation(pool, 0, 4, 2, rng),))
    out = mutate(chrom, pool, [chrom], rng, MoeaddConfig(mutation_rate=0.0))
    assert not structural_equal(out, chrom)
    out.equations[0].check_invariants(max_factors=2)


def test_mutation_fuzz_never_returns_source(rng):
    pool = TokenPool([DerivativeFamily(("u",), ("t", "x"), (1, 3)),
                      CoordinateFamily(("t", "x")), TrigFamily(("t", "x"))])
    cfg = MoeaddConfig(max_factors=2, mutation_rate=1.0, sparsity_mutation_rate=0.5,
                       idle_term_mutation=0.5, target_mutation_rate=0.3)
    for _ in range(1000):
        chrom = SystemChromosome((random_equation(pool, 0, 5, 2, rng),))
        out = mutate(chrom, pool, [chrom], rng, cfg)
        assert not structural_equal(out, chrom)
        eq = out.equations[0]
        eq.check_invariants(max_factors=2)
        assert cfg.sparsity_interval[0] <= eq.sparsity <= cfg.sparsity_interval[1]
        for t in eq.terms:
            for f in t.factors:
                if f.family == "trig":
                    assert 0.5 <= f.params[0] <= 2.0


def test_mutation_gives_up_with_a_warning(rng, caplog):
    pool = pool_2d(max_orders=(1, 0))  # only u and u_t exist: no alternative structure
    chrom = SystemChromosome((Equation((term(d(0, 1, 0)), term(d(0, 0, 0))), 0, 0.1),))
    with caplog.at_level(logging.WARNING, logger="eqsearch.moeadd"):
        out = mutate(chrom, pool, [chrom], rng, MoeaddConfig(max_factors=1))
    assert structural_equal(out, chrom)
    assert "no structurally unique mutation" in caplog.text


# -- population update ---------------------------------------------------------------------------


def test_dominated_offspring_sharing_a_region_is_removed():
    weights = das_dennis_weights(2, 3)
    pop = [individual((0, 3), 0), individual((1, 2), 1), individual((2, 1), 2),
           individual((3, 0), 3)]
    child = individual((5, 5), 1, k=1)
    out = update_population(pop, child, weights, 4.0)
    assert len(out) == 4 and all(a is b for a, b in zip(out, pop))


def test_sole_occupant_of_last_level_is_protected():
    weights = das_dennis_weights(2, 3)
    pop = [individual((0, 3), 0), individual((1, 2), 0), individual((2, 1), 2),
           individual((3, 0), 3)]
    child = individual((5, 5), 1, k=1)  # worst, but alone in region 1
    out = update_population(pop, child, weights, 4.0)
    assert child in out and len(out) == 4
    # the crowded region 0 on the previous level loses its worst-PBI member
    assert sum(ind.region_id == 0 for ind in out) == 1


def test_dominating_offspring_is_kept():
    weights = das_dennis_weights(2, 3)
    pop = [individual((1, 4), 0), individual((2, 3), 1), individual((3, 2), 2),
           individual((4, 1), 3)]
    child = individual((0.5, 0.5), 1, k=1)
    out = update_population(pop, child, weights, 4.0)
    assert child in out and len(out) == 4
    assert child.level == 0


def test_single_level_removes_from_most_crowded_region():
    weights = das_dennis_weights(2, 3)
    pop = [individual((0, 3), 0), individual((1, 2), 1), individual((2, 1), 1),
           individual((3, 0), 3)]
    child = individual((1.5, 1.5), 1, k=1)
    merged = pop + [child]
    drop = select_removal(merged, weights, 4.0)
    assert merged[drop].region_id == 1


def test_update_fuzz_keeps_population_size():
    rng = np.random.default_rng(5)
    weights = das_dennis_weights(4, 2)
    pop = [individual(rng.random(4), int(rng.integers(len(weights)))) for _ in weights]
    for _ in range(1000):
        objs = rng.random(4) * rng.choice([0.5, 1.0, 2.0])
        child = individual(objs)
        child.region_id = assign_region(objs, weights, Normalizer(pop + [child]))
        pop = update_population(pop, child, weights, 4.0)
        assert len(pop) == len(weights)
    levels = [ind.level for ind in pop]
    assert min(levels) == 0


# -- driver ----------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def lv_problem():
    fields = list(generate_lotka_volterra(20, 20, 20, 20, 4, 2, 0.002, 500, substeps=10))
    pool = TokenPool([DerivativeFamily(("u", "v"), ("t",), (1,), cross_derivatives=False)])
    return pool, Problem(pool, fields, build_cache(fields, 1))


def true_lv(pool):
    return SystemChromosome((
        Equation((term(d(0, 1)), term(d(0, 0)), term(d(0, 0), d(1, 0))), 0, 1e-9, 0),
        Equation((term(d(1, 1)), term(d(1, 0)), term(d(0, 0), d(1, 0))), 0, 1e-9, 1)))


def test_zero_epochs_returns_initial_front(lv_problem):
    pool, problem = lv_problem
    cfg = MoeaddConfig(H=2, epochs=0, n_terms=3, max_factors=2, seed=1)
    archive = run(cfg, pool, problem)
    assert len(archive.population) == cfg.population_size(4)
    levels = nondominated_sort(archive.population)
    assert {id(archive.population[i]) for i in levels[0]} == {id(m) for m in archive.members}
    assert len(archive.traces) == 1


def test_restricted_pool_finds_lotka_volterra(lv_problem, tmp_path):
    pool, problem = lv_problem
    cfg = MoeaddConfig(H=2, epochs=10, n_terms=3, max_factors=2, seed=3,
                       sparsity_interval=(1e-12, 1e-4))
    log_path = tmp_path / "trace.jsonl"
    archive = run(cfg, pool, problem, log_path=log_path)
    target = true_lv(pool)
    found = False
    for ind in archive.members:
        eqs = [Equation(tuple(e.active_terms()), 0, 0.1, e.variable)
               for e in ind.chromosome.equations]
        found |= all(structural_equal(a, b) for a, b in zip(eqs, target.equations))
    assert found
    lines = log_path.read_text().splitlines()
    assert len(lines) == 11 and len(archive.traces) == 11
    records = archive.records(pool)
    assert records and all(len(r["objectives"]) == 4 for r in records)


def test_run_is_deterministic(lv_problem):
    pool, problem = lv_problem
    cfg = MoeaddConfig(H=2, epochs=3, n_terms=3, max_factors=2, seed=9)
    a = run(cfg, pool, problem)
    b = run(cfg, pool, problem)
    assert a.records(pool) == b.records(pool)
