"""Evolutionary multi-objective search based on dominance and decomposition.

The objective space is split into sub-regions by evenly spaced weight
vectors. Each epoch produces one offspring per weight vector: parents come
mostly from the weight's neighbourhood, are recombined by term/factor
exchange, mutated until structurally unique, fitted and inserted. One member
is then removed by a non-domination-level / crowding / penalty-based
intersection (PBI) case analysis, so the population size is constant.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import GenerationExhaustedError
from .model import (Equation, SystemChromosome, Term, TokenPool, random_equation, random_term,
                    shape_in, structural_equal, term_in)
from .solver import PENALTY

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
UNIQUENESS_ATTEMPTS = 50


@dataclass(frozen=True)
class MoeaddConfig:
    """Search settings. The population size is the weight-vector count ``C(H+m-1, m-1)``."""

    H: int = 7
    theta: float = 4.0
    delta: float = 0.9
    n_parents: int = 2
    epochs: int = 50
    crossover_rate: float = 0.8
    term_swap_prob: float = 0.5
    factor_swap_prob: float = 0.3
    mutation_rate: float = 0.6
    sparsity_mutation_rate: float = 0.3
    idle_term_mutation: float = 0.0
    target_mutation_rate: float = 0.0
    n_terms: int = 5
    max_factors: int = 2
    sparsity_interval: tuple = (1e-9, 1.0)
    neighborhood: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("H must be at least 1")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.n_parents < 2:
            raise ValueError("at least two parents are needed for crossover")
        lo, hi = self.sparsity_interval
        if not 0 < lo <= hi:
            raise ValueError("sparsity interval must be positive and ordered")

    def population_size(self, n_objectives: int) -> int:
        return math.comb(self.H + n_objectives - 1, n_objectives - 1)

    def neighborhood_size(self, n_pop: int) -> int:
        if self.neighborhood is not None:
            return min(int(self.neighborhood), n_pop - 1)
        return min(max(2, math.ceil(n_pop / 5)), n_pop - 1)


@dataclass(frozen=True)
class WeightVector:
    components: np.ndarray
    neighbor_ids: tuple


@dataclass(eq=False)
class Individual:
    chromosome: SystemChromosome
    objectives: np.ndarray
    region_id: int = -1
    level: int = 0


# -- decomposition ---------------------------------------------------------------


def das_dennis_weights(m: int, H: int, T: int | None = None) -> list:
    """All compositions of ``H`` into ``m`` parts, divided by ``H``.

    Neighbour lists hold the ``T`` nearest other vectors (Euclidean, ties by
    index); ``T`` defaults to ``max(2, ceil(n / 5))`` capped at ``n - 1``.
    """
    if H < 1 or m < 1:
        raise ValueError("need m >= 1 objectives and H >= 1 divisions")
    comps = []
    for bars in itertools.combinations(range(H + m - 1), m - 1):
        parts, prev = [], -1
        for b in bars:
            parts.append(b - prev - 1)
            prev = b
        parts.append(H + m - 2 - prev)
        comps.append(parts)
    W = np.asarray(sorted(comps), dtype=float) / H
    n = W.shape[0]
    if T is None:
        T = max(2, math.ceil(n / 5))
    T = min(T, n - 1)
    dist = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=2)
    out = []
    for i in range(n):
        order = [j for j in np.lexsort((np.arange(n), dist[i])) if j != i]
        w = W[i].copy()
        w.setflags(write=False)
        out.append(WeightVector(w, tuple(int(j) for j in order[:T])))
    return out


def pbi(objectives, weight, theta: float, ideal_point=None):
    """Penalty-based intersection ``(g, d1, d2)`` of one objective vector."""
    F = np.asarray(objectives, dtype=float)
    w = np.asarray(weight, dtype=float)
    norm_w = np.linalg.norm(w)
    if norm_w == 0:
        raise ValueError("zero weight vector")
    ideal = np.zeros_like(F) if ideal_point is None else np.asarray(ideal_point, dtype=float)
    Fp = np.maximum(F - ideal, 0.0)
    unit = w / norm_w
    d1 = float(abs(Fp @ unit))
    d2 = float(np.linalg.norm(Fp - d1 * unit))
    return d1 + theta * d2, d1, d2


def nondominated_sort(population) -> list:
    """Partition into non-domination levels; returns a list of index lists."""
    objs = [ind.objectives if isinstance(ind, Individual) else ind for ind in population]
    if not objs:
        return []
    levels = kernels.nondominated_levels(np.asarray(objs, dtype=float))
    return [list(np.flatnonzero(levels == k)) for k in range(int(levels.max()) + 1)]


class Normalizer:
    """Divides objectives by the population maximum over non-penalised members.

    The ideal point is the origin: every objective is non-negative and the
    best achievable quality and complexity are both 0.
    """

    def __init__(self, population):
        objs = np.asarray([ind.objectives for ind in population], dtype=float)
        ok = objs[np.all(objs < PENALTY, axis=1)] if objs.size else objs
        base = ok if ok.shape[0] else objs
        self.scale = np.maximum(base.max(axis=0), NORM_FLOOR)

    def __call__(self, objectives):
        return np.asarray(objectives, dtype=float) / self.scale


def assign_region(objectives, weights, normalizer) -> int:
    """Index of the weight vector with the smallest perpendicular distance."""
    F = normalizer(objectives)
    d2 = [pbi(F, w.components, 1.0)[2] for w in weights]
    return int(np.argmin(d2))


# -- variation -------------------------------------------------------------------


def mating_selection(region_id: int, population, delta: float, n_parents: int, rng,
                     weights=None) -> list:
    """Parents from the neighbourhood with probability ``delta``, else from everyone."""
    if not population:
        raise ValueError("empty population")
    n = len(population)
    everyone = list(range(n))
    if n_parents > n:
        log.info("requested %d parents from a population of %d; sampling with replacement",
                 n_parents, n)
        return [population[int(i)] for i in rng.choice(n, size=n_parents, replace=True)]
    if rng.random() < delta:
        regions = {region_id}
        if weights is not None:
            regions.update(weights[region_id].neighbor_ids)
        local = [i for i in everyone if population[i].region_id in regions]
        if len(local) >= n_parents:
            picks = [local[int(i)] for i in rng.choice(len(local), n_parents, replace=False)]
        else:
            rest = [i for i in everyone if i not in local]
            extra = [rest[int(i)] for i in rng.choice(len(rest), n_parents - len(local),
                                                      replace=False)]
            picks = local + extra
    else:
        picks = [int(i) for i in rng.choice(n, n_parents, replace=False)]
    return [population[i] for i in picks]


def _valid_terms(terms, variable, pool: TokenPool) -> bool:
    for i, t in enumerate(terms):
        if not any(pool.is_independent(f) for f in t.factors):
            return False
        if shape_in(t, terms[i + 1:]):
            return False
        if not all(pool.allows(f, variable) for f in t.factors):
            return False
    return any(t.has_derivative_of(variable) for t in terms)


def _retarget(terms, target_idx, variable, rng):
    if terms[target_idx].has_derivative_of(variable):
        return target_idx
    options = [i for i, t in enumerate(terms) if t.has_derivative_of(variable)]
    return options[int(rng.integers(len(options)))]


def _swap_factor(ta: Term, tb: Term, rng):
    only_a = [f for f in ta.factors if not any(f.equals(g) for g in tb.factors)]
    only_b = [f for f in tb.factors if not any(f.equals(g) for g in ta.factors)]
    if not only_a or not only_b:
        return None
    fa = only_a[int(rng.integers(len(only_a)))]
    fb = only_b[int(rng.integers(len(only_b)))]
    try:
        na = Term(tuple(fb if f is fa else f for f in ta.factors))
        nb = Term(tuple(fa if f is fb else f for f in tb.factors))
    except ValueError:
        return None
    return na, nb


def crossover_equations(a: Equation, b: Equation, pool: TokenPool, rng, term_swap_prob=0.5,
                        factor_swap_prob=0.3):
    """Term- and factor-level exchange between two equations of one variable."""
    if a.variable != b.variable:
        raise ValueError("crossover needs equations describing the same variable")
    var = a.variable
    ta, tb = list(a.terms), list(b.terms)
    # activity of every term in its source equation, kept as a mutation hint
    ha, hb = list(a.active_mask()), list(b.active_mask())
    ia = [i for i, t in enumerate(ta) if not term_in(t, tb)]
    ib = [i for i, t in enumerate(tb) if not term_in(t, ta)]
    ia = [ia[int(k)] for k in rng.permutation(len(ia))]
    ib = [ib[int(k)] for k in rng.permutation(len(ib))]
    for i, j in zip(ia, ib):
        if rng.random() < term_swap_prob:
            na, nb = list(ta), list(tb)
            na[i], nb[j] = tb[j], ta[i]
            if _valid_terms(na, var, pool) and _valid_terms(nb, var, pool):
                ta, tb = na, nb
                ha[i], hb[j] = hb[j], ha[i]
                continue
        if rng.random() < factor_swap_prob:
            swapped = _swap_factor(ta[i], tb[j], rng)
            if swapped is None:
                continue
            na, nb = list(ta), list(tb)
            na[i], nb[j] = swapped
            if _valid_terms(na, var, pool) and _valid_terms(nb, var, pool):
                ta, tb = na, nb
                ha[i] = hb[j] = True
    alpha = rng.random()
    la = alpha * a.sparsity + (1 - alpha) * b.sparsity
    lb = (1 - alpha) * a.sparsity + alpha * b.sparsity
    ca = a.unfitted(terms=tuple(ta), target_idx=_retarget(ta, a.target_idx, var, rng),
                    sparsity=la, active=np.asarray(ha, dtype=bool))
    cb = b.unfitted(terms=tuple(tb), target_idx=_retarget(tb, b.target_idx, var, rng),
                    sparsity=lb, active=np.asarray(hb, dtype=bool))
    return ca, cb


def crossover(parent_a, parent_b, pool: TokenPool, rng, term_swap_prob=0.5,
              factor_swap_prob=0.3):
    """Recombine two system chromosomes equation by equation."""
    sa = parent_a.chromosome if isinstance(parent_a, Individual) else parent_a
    sb = parent_b.chromosome if isinstance(parent_b, Individual) else parent_b
    if len(sa) != len(sb):
        raise ValueError("parents describe different variable sets")
    pairs = [crossover_equations(x, y, pool, rng, term_swap_prob, factor_swap_prob)
             for x, y in zip(sa.equations, sb.equations)]
    return (SystemChromosome(tuple(p[0] for p in pairs)),
            SystemChromosome(tuple(p[1] for p in pairs)))


def _pick_term(eq: Equation, rng, inactive_bias: float = 0.8) -> int:
    """Random term index, preferring terms the sparsity stage switched off."""
    mask = eq.active_mask()
    idle = [i for i in range(len(eq.terms)) if not mask[i] and i != eq.target_idx]
    if idle and rng.random() < inactive_bias:
        return idle[int(rng.integers(len(idle)))]
    return int(rng.integers(len(eq.terms)))


def _mutate_term(eq: Equation, pool, rng, max_factors):
    i = _pick_term(eq, rng)
    others = [t for k, t in enumerate(eq.terms) if k != i]
    keeps_anchor = any(t.has_derivative_of(eq.variable) for t in others)
    need = None if keeps_anchor and rng.random() < 0.5 else eq.variable
    new = random_term(pool, rng, max_factors, require_derivative_of=need, variable=eq.variable)
    if shape_in(new, eq.terms):
        return None
    terms = list(eq.terms)
    terms[i] = new
    return terms


def _mutate_factor(eq: Equation, pool, rng, max_factors):
    i = _pick_term(eq, rng)
    term = eq.terms[i]
    j = int(rng.integers(len(term.factors)))
    rest = [f for k, f in enumerate(term.factors) if k != j]
    need_indep = not any(pool.is_independent(f) for f in rest)
    tok = pool.sample_token(rng, independent_only=need_indep, exclude=rest, variable=eq.variable)
    if tok is None:
        return None
    try:
        new = Term(tuple(rest + [tok]))
    except ValueError:
        return None
    terms = list(eq.terms)
    terms[i] = new
    return terms


def _mutate_param(eq: Equation, pool, rng, max_factors):
    slots = [(i, j) for i, t in enumerate(eq.terms) for j, f in enumerate(t.factors)
             if pool.family(f.family).param_ranges(f.key)]
    if not slots:
        return None
    i, j = slots[int(rng.integers(len(slots)))]
    term = eq.terms[i]
    tok = term.factors[j]
    new_tok = pool.family(tok.family).perturb(tok, rng)
    if new_tok.equals(tok):
        return None
    terms = list(eq.terms)
    terms[i] = Term(tuple(new_tok if k == j else f for k, f in enumerate(term.factors)))
    return terms


MUTATIONS = (_mutate_term, _mutate_factor, _mutate_param)


def mutate_equation(eq: Equation, pool: TokenPool, rng, max_factors: int,
                    attempts: int = 20) -> Equation:
    """One structural mutation (term, factor or parameter); unchanged if none is valid."""
    for _ in range(attempts):
        op = MUTATIONS[int(rng.integers(len(MUTATIONS)))]
        terms = op(eq, pool, rng, max_factors)
        if terms is None or not _valid_terms(terms, eq.variable, pool):
            continue
        old = eq.active_mask()
        hint = np.array([bool(old[k]) if terms[k] is eq.terms[k] else True
                         for k in range(len(terms))])
        return eq.unfitted(terms=tuple(terms), active=hint,
                           target_idx=_retarget(terms, eq.target_idx, eq.variable, rng))
    return eq.unfitted(active=eq.active)


def redraw_idle_terms(eq: Equation, pool: TokenPool, rng, max_factors: int,
                      probability: float) -> Equation:
    """Replace each term the sparsity stage switched off with probability ``probability``.

    Idle terms do not influence the fitted equation, so redrawing them is a
    free exploration step.
    """
    mask = eq.active_mask()
    terms = list(eq.terms)
    hint = list(mask)
    for i in range(len(terms)):
        if mask[i] or i == eq.target_idx or rng.random() >= probability:
            continue
        new = random_term(pool, rng, max_factors, variable=eq.variable)
        rest = terms[:i] + terms[i + 1:]
        if shape_in(new, rest):
            continue
        trial = rest[:i] + [new] + rest[i:]
        if _valid_terms(trial, eq.variable, pool):
            terms, hint[i] = trial, True
    return eq.unfitted(terms=tuple(terms), active=np.asarray(hint, dtype=bool))


def retarget(eq: Equation, rng) -> Equation:
    """Move the left-hand side to another term holding a derivative of the variable."""
    options = [i for i, t in enumerate(eq.terms)
               if i != eq.target_idx and t.has_derivative_of(eq.variable)]
    if not options:
        return eq
    return eq.unfitted(target_idx=options[int(rng.integers(len(options)))], active=eq.active)


def _mutate_sparsity(eq: Equation, rng, interval) -> Equation:
    lo, hi = np.log10(interval[0]), np.log10(interval[1])
    step = rng.uniform(-0.1, 0.1) * (hi - lo)
    value = float(10 ** np.clip(np.log10(eq.sparsity) + step, lo, hi))
    return replace(eq, sparsity=value)


def mutate(individual, pool: TokenPool, population, rng, config: MoeaddConfig = MoeaddConfig(),
           force: bool = False) -> SystemChromosome:
    """Mutate a chromosome, repeating until it differs structurally from the population.

    Returns an unfitted chromosome; the caller re-evaluates objectives.
    """
    chrom = individual.chromosome if isinstance(individual, Individual) else individual
    others = [p.chromosome if isinstance(p, Individual) else p for p in population]

    def duplicate(c):
        return any(structural_equal(c, o) for o in others)

    def step(c):
        k = int(rng.integers(len(c)))
        eqs = list(c.equations)
        eqs[k] = mutate_equation(eqs[k], pool, rng, config.max_factors)
        return SystemChromosome(tuple(eqs))

    def refresh_idle(c):
        eqs = [redraw_idle_terms(eq, pool, rng, config.max_factors, config.idle_term_mutation)
               for eq in c.equations]
        return SystemChromosome(tuple(eqs))

    # keep term activity as a hint for which terms are free to mutate
    equations = [eq.unfitted(active=eq.active) for eq in chrom.equations]
    if rng.random() < config.sparsity_mutation_rate:
        k = int(rng.integers(len(equations)))
        equations[k] = _mutate_sparsity(equations[k], rng, config.sparsity_interval)
    out = SystemChromosome(tuple(equations))
    if config.idle_term_mutation > 0:
        out = refresh_idle(out)
    if config.target_mutation_rate > 0:
        out = SystemChromosome(tuple(
            retarget(eq, rng) if rng.random() < config.target_mutation_rate else eq
            for eq in out.equations))
    if force or rng.random() < config.mutation_rate:
        out = step(out)
    attempts = 0
    while duplicate(out) and attempts < UNIQUENESS_ATTEMPTS:
        out = step(out)
        attempts += 1
    if attempts >= UNIQUENESS_ATTEMPTS and duplicate(out):
        log.warning("no structurally unique mutation after %d attempts; accepting duplicate",
                    UNIQUENESS_ATTEMPTS)
    return out


# -- population update -------------------------------------------------------------


def _crowded_region(candidates, population, weights, theta, normalizer):
    counts = {}
    for ind in population:
        counts[ind.region_id] = counts.get(ind.region_id, 0) + 1
    pbi_sum = {}
    for i in candidates:
        ind = population[i]
        g = pbi(normalizer(ind.objectives), weights[ind.region_id].components, theta)[0]
        pbi_sum[ind.region_id] = pbi_sum.get(ind.region_id, 0.0) + g
    regions = sorted({population[i].region_id for i in candidates})
    return max(regions, key=lambda r: (counts[r], pbi_sum[r], -r))


def _worst_in(region, candidates, population, weights, theta, normalizer):
    members = [i for i in candidates if population[i].region_id == region]
    scores = [pbi(normalizer(population[i].objectives), weights[region].components, theta)[0]
              for i in members]
    return members[int(np.argmax(scores))]


def select_removal(population, weights, theta: float) -> int:
    """Index of the member to delete after an offspring was inserted."""
    normalizer = Normalizer(population)
    levels = nondominated_sort(population)
    for rank, idx in enumerate(levels):
        for i in idx:
            population[i].level = rank
    last = levels[-1]
    if len(levels) == 1:
        region = _crowded_region(last, population, weights, theta, normalizer)
        return _worst_in(region, last, population, weights, theta, normalizer)
    if len(last) == 1:
        x = last[0]
        region = population[x].region_id
        sole = sum(1 for ind in population if ind.region_id == region) == 1
        if not sole:
            return x
        prev = levels[-2]
        region = _crowded_region(prev, population, weights, theta, normalizer)
        return _worst_in(region, prev, population, weights, theta, normalizer)
    region = _crowded_region(last, population, weights, theta, normalizer)
    return _worst_in(region, last, population, weights, theta, normalizer)


def update_population(population, offspring: Individual, weights, theta: float) -> list:
    """Insert ``offspring`` and delete one member by the level/crowding/PBI case analysis."""
    merged = list(population) + [offspring]
    drop = select_removal(merged, weights, theta)
    out = [ind for k, ind in enumerate(merged) if k != drop]
    for rank, idx in enumerate(nondominated_sort(out)):
        for i in idx:
            out[i].level = rank
    return out


# -- driver ----------------------------------------------------------------------


@dataclass
class ParetoArchive:
    """Level-0 members of the final population plus per-epoch traces."""

    members: list
    population: list
    traces: list = field(default_factory=list)

    def records(self, pool: TokenPool) -> list:
        return [{"equations": ind.chromosome.render(pool),
                 "objectives": [float(v) for v in ind.objectives],
                 "region": ind.region_id} for ind in self.members]


def _trace(epoch, population, weights, theta, n_vars) -> dict:
    normalizer = Normalizer(population)
    front = [ind for ind in population if ind.level == 0]
    objs = np.asarray([ind.objectives for ind in population])
    hv = sum(pbi(normalizer(ind.objectives), weights[ind.region_id].components, theta)[0]
             for ind in front)
    return {"epoch": epoch,
            "best_Q": [float(objs[:, 2 * v].min()) for v in range(n_vars)],
            "hypervolume_proxy": float(hv),
            "front_size": len(front)}


def initial_population(problem, pool, config: MoeaddConfig, n_pop: int, rng) -> list:
    out = []
    budget = 100 * n_pop
    while len(out) < n_pop:
        budget -= 1
        if budget < 0:
            raise GenerationExhaustedError("could not create a structurally unique population")
        chrom = SystemChromosome(tuple(
            _random_equation(pool, v, config, rng) for v in range(len(pool.variables))))
        if any(structural_equal(chrom, ind.chromosome) for ind in out):
            continue
        fitted, objs = problem.evaluate(chrom)
        out.append(Individual(fitted, objs))
    return out


def _random_equation(pool, variable, config, rng):
    return random_equation(pool, variable, config.n_terms, config.max_factors, rng,
                           config.sparsity_interval)


def run(config: MoeaddConfig, pool: TokenPool, problem, rng=None, log_path=None,
        log_population: bool = False) -> ParetoArchive:
    """Execute the search for ``config.epochs`` epochs and return the Pareto archive.

    ``problem`` maps chromosomes to ``(fitted_chromosome, objectives)`` (see
    :class:`eqsearch.evaluation.Problem`). With ``log_path`` one JSON line per
    epoch is written.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    m = problem.n_objectives
    n_vars = m // 2
    weights = das_dennis_weights(m, config.H)
    n_pop = len(weights)
    T = config.neighborhood_size(n_pop)
    if T != len(weights[0].neighbor_ids):
        weights = das_dennis_weights(m, config.H, T)
    population = initial_population(problem, pool, config, n_pop, rng)
    for ind, region in zip(population, rng.permutation(n_pop)):
        ind.region_id = int(region)
    for rank, idx in enumerate(nondominated_sort(population)):
        for i in idx:
            population[i].level = rank
    traces = [_trace(0, population, weights, config.theta, n_vars)]
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        if sink:
            _write_trace(sink, traces[0], population, pool, log_population)
        for epoch in range(1, config.epochs + 1):
            for w_idx in range(n_pop):
                parents = mating_selection(w_idx, population, config.delta, config.n_parents,
                                           rng, weights)
                if rng.random() < config.crossover_rate:
                    child, _ = crossover(parents[0], parents[1], pool, rng,
                                         config.term_swap_prob, config.factor_swap_prob)
                else:
                    child = parents[0].chromosome
                child = mutate(child, pool, population, rng, config)
                fitted, objs = problem.evaluate(child)
                offspring = Individual(fitted, objs)
                offspring.region_id = assign_region(objs, weights,
                                                    Normalizer(population + [offspring]))
                population = update_population(population, offspring, weights, config.theta)
            traces.append(_trace(epoch, population, weights, config.theta, n_vars))
            if sink:
                _write_trace(sink, traces[-1], population, pool, log_population)
            log.debug("epoch %d: best Q %s", epoch, traces[-1]["best_Q"])
    finally:
        if sink:
            sink.close()
    front = [ind for ind in population if ind.level == 0]
    return ParetoArchive(front, population, traces)


def _write_trace(sink, trace, population, pool, with_population):
    record = dict(trace)
    if with_population:
        record["population"] = [ind.chromosome.render(pool) for ind in population]
    sink.write(json.dumps(record) + "\n")
