"""Noise sweeps: run the search repeatedly, match results to the ground truth, aggregate."""
from __future__ import annotations

import logging
import re
import statistics
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .. import moeadd
from ..benchmarks import NoiseSpec, add_noise
from ..errors import ConfigError
from ..evaluation import Problem
from ..grid import GridField
from ..model import Equation, SystemChromosome, Term, Token, TokenPool
from ..preprocess import DerivativeCache, build_cache
from .config import ExperimentConfig, load_config, stream_seed

log = logging.getLogger(__name__)

_NUMBER = r"[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?"


# -- ground truth ---------------------------------------------------------------


@dataclass
class TruthEquation:
    """A ground-truth equation and the form its coefficients are reported in.

    ``equation`` is fitted with the target coefficient -1. With ``zero_form``
    the truth was written as ``T_0 + a_1 T_1 + ... = 0`` and reported
    coefficients are the ``a_i``; otherwise it was written as
    ``T_0 = c_1 T_1 + ...`` and reported coefficients are the ``c_i``. The
    target term always reports 1.
    """

    equation: Equation
    zero_form: bool
    labels: list

    def reported(self, rhs: dict) -> dict:
        """Convert rhs coefficients (term index -> c_i) into the reporting form."""
        out = {}
        for i in range(len(self.equation.terms)):
            if i == self.equation.target_idx:
                out[i] = 1.0
            elif i in rhs:
                out[i] = -rhs[i] if self.zero_form else rhs[i]
        return out

    @property
    def coefficients(self) -> dict:
        return self.reported(self.equation.rhs_coefficients())


def token_table(pool: TokenPool) -> dict:
    """Rendered text -> token for every pool token without continuous parameters."""
    table = {}
    for fam in pool.families:
        for key in fam.members():
            ranges = fam.param_ranges(key)
            if any(not is_int for _, _, is_int in ranges):
                continue
            grids = [range(int(lo), int(hi) + 1) for lo, hi, _ in ranges]
            for params in (np.array(np.meshgrid(*grids)).T.reshape(-1, len(grids))
                           if grids else [()]):
                tok = Token(fam.name, key, tuple(float(p) for p in params))
                table[pool.render(tok)] = tok
    return table


def _parse_side(text: str, table: dict) -> list:
    """Signed sum ``[c *] F_1 * F_2 ...`` -> list of (coefficient, Term)."""
    text = text.strip()
    if not text or text == "0":
        return []
    if text[0] not in "+-":
        text = "+ " + text
    chunks = re.split(r"\s+(?=[+-]\s)", text)
    out = []
    for chunk in chunks:
        sign = -1.0 if chunk.lstrip().startswith("-") else 1.0
        body = chunk.strip()[1:].strip()
        parts = [p.strip() for p in body.split(" * ")]
        coeff = sign
        if re.fullmatch(_NUMBER, parts[0]):
            coeff *= float(parts[0])
            parts = parts[1:]
        if not parts:
            raise ConfigError(f"constant terms are not supported in ground truth: {chunk!r}")
        try:
            out.append((coeff, Term(tuple(table[p] for p in parts))))
        except KeyError as exc:
            raise ConfigError(f"unknown token {exc.args[0]!r} in ground truth") from None
    return out


def parse_truth(text: str, pool: TokenPool, variable: int) -> TruthEquation:
    """Parse ``"T_0 = c_1 * T_1 + ..."`` or ``"T_0 + a_1 * T_1 + ... = 0"``.

    Tokens use the pool's rendering (``d^1u/dt^1``, ``u``, ``t``, ...).
    The first term on the left is the target and must have coefficient 1.
    """
    if text.count("=") != 1:
        raise ConfigError(f"ground truth needs exactly one '=': {text!r}")
    lhs, rhs = text.split("=")
    table = token_table(pool)
    left, right = _parse_side(lhs, table), _parse_side(rhs, table)
    if not left:
        raise ConfigError(f"ground truth has an empty left side: {text!r}")
    zero_form = not right
    if zero_form:
        terms = left
    else:
        if len(left) != 1:
            raise ConfigError("with a non-zero right side the left side must be one term")
        terms = left + [(-c, t) for c, t in right]
    if terms[0][0] != 1.0:
        raise ConfigError("the target (first) term must have coefficient 1")
    # sum b_i F_i = 0 with b_target = -1
    coeffs = np.asarray([-c for c, _ in terms], dtype=float)
    eq = Equation(tuple(t for _, t in terms), 0, 1.0, variable, coeffs, 0.0,
                  np.ones(len(terms), dtype=bool))
    labels = [t.render(pool) for _, t in terms]
    return TruthEquation(eq, zero_form, labels)


# -- matching -------------------------------------------------------------------


@dataclass
class MatchReport:
    """Per-term detection for one candidate equation against one truth equation."""

    detected: list
    coefficients: list
    success: bool
    normalized: bool
    extra_terms: list = field(default_factory=list)


def match_equation(candidate: Equation, truth: TruthEquation, coeff_tol: float = 0.05,
                   pool: TokenPool | None = None) -> MatchReport:
    """Compare a fitted candidate with the truth after rescaling to the truth's target.

    A truth term is detected iff a structurally equal active term exists in the
    candidate. Success needs every truth term detected and no extra active
    term (or bias) with ``|coefficient| > coeff_tol * min |truth coefficient|``.
    A candidate without the truth's target term cannot be normalized: nothing
    is detected.
    """
    t_eq = truth.equation
    n = len(t_eq.terms)
    if not candidate.is_fitted:
        return MatchReport([False] * n, [None] * n, False, False)
    mask = candidate.active_mask().copy()
    mask[candidate.target_idx] = True
    b = np.asarray(candidate.coefficients, dtype=float)
    active = [i for i in range(len(candidate.terms)) if mask[i]]

    def find(term):
        return next((i for i in active if candidate.terms[i].equals(term)), None)

    anchor = find(t_eq.target)
    if anchor is None or b[anchor] == 0:
        return MatchReport([False] * n, [None] * n, False, False)
    scale = -1.0 / b[anchor]
    b = b * scale
    bias = candidate.bias * scale
    used = set()
    detected, rhs = [], {}
    for j, term in enumerate(t_eq.terms):
        i = find(term)
        detected.append(i is not None)
        if i is not None:
            used.add(i)
            if j != t_eq.target_idx:
                rhs[j] = float(b[i])
    reported = truth.reported(rhs)
    coefficients = [reported.get(j) for j in range(n)]
    truth_mags = [abs(c) for j, c in truth.coefficients.items() if j != t_eq.target_idx]
    threshold = coeff_tol * (min(truth_mags) if truth_mags else 1.0)
    extras = [(candidate.terms[i].render(pool) if pool else str(i), float(b[i]))
              for i in active if i not in used]
    if bias != 0:
        extras.append(("bias", float(bias)))
    success = all(detected) and all(abs(c) <= threshold for _, c in extras)
    return MatchReport(detected, coefficients, bool(success), True,
                       [e for e in extras if abs(e[1]) > threshold])


# -- data handling ------------------------------------------------------------


def slice_time(fields, caches, start: int, stop: int):
    """Restrict fields and derivative caches to time indices ``start:stop`` (axis 0)."""
    def cut(f: GridField) -> GridField:
        axes = (f.axes[0][start:stop],) + tuple(f.axes[1:])
        return GridField(f.values[start:stop], axes, f.var_name, f.axis_names)

    new_fields = [cut(f) for f in fields]
    new_caches = {name: DerivativeCache({k: cut(v) for k, v in c.entries.items()}, c.max_order)
                  for name, c in caches.items()}
    return new_fields, new_caches


def noisy_fields(fields, level: float, seed: int):
    if level == 0:
        return list(fields)
    seeds = np.random.SeedSequence(seed).generate_state(len(fields))
    return [add_noise(f, NoiseSpec(float(level), int(s))) for f, s in zip(fields, seeds)]


def select_member(archive, val_problem=None):
    """Archive member with minimal summed Q (on the validation window if given).

    Only the best-Q member at each complexity is a candidate, which the
    nondominated archive already guarantees; ties break on archive order.
    """
    def score(ind):
        if val_problem is None:
            return float(np.sum(ind.objectives[::2]))
        q = val_problem.quality(ind.chromosome, [False] * len(ind.chromosome))
        return float(np.sum(q))

    scores = [score(ind) for ind in archive.members]
    return archive.members[int(np.argmin(scores))], scores


# -- sweep ----------------------------------------------------------------------


@dataclass
class RunRecord:
    level: float
    run: int
    noise_seed: int
    evolution_seed: int
    success: bool = False
    equations: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    archive: list = field(default_factory=list)
    error: str | None = None
    seconds: float = 0.0

    def to_dict(self, with_timing: bool = False) -> dict:
        d = {
            "noise_level": self.level, "run": self.run,
            "noise_seed": self.noise_seed, "evolution_seed": self.evolution_seed,
            "success": self.success, "equations": self.equations,
            "objectives": self.objectives,
            "matches": [{"detected": m.detected, "coefficients": m.coefficients,
                         "success": m.success, "normalized": m.normalized,
                         "extra_terms": [list(e) for e in m.extra_terms]}
                        for m in self.matches],
            "archive": self.archive, "error": self.error,
        }
        if with_timing:
            d["seconds"] = self.seconds
        return d


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    truth_labels: list
    truth_coefficients: list
    records: list
    stats: list


def run_single(config: ExperimentConfig, fields, pool: TokenPool, truths, level: float,
               run: int, master_seed: int, level_idx: int) -> RunRecord:
    """One search on one noise realisation; failures are recorded, never raised."""
    rec = RunRecord(float(level), run, stream_seed(master_seed, run, level_idx, 0),
                    stream_seed(master_seed, run, level_idx, 1))
    start = time.perf_counter()
    try:
        data = noisy_fields(fields, level, rec.noise_seed)
        caches = build_cache(data, config.cache_order(), config.preprocess_spec())
        val_problem = None
        if config.selection == "validation":
            nt = data[0].shape[0]
            cut = int(round(nt * (1.0 - config.validation_fraction)))
            if cut < 2 or nt - cut < 2:
                raise ConfigError("time axis too short for the validation split")
            train_f, train_c = slice_time(data, caches, 0, cut)
            val_f, val_c = slice_time(data, caches, cut, nt)
            problem = _problem(config, pool, train_f, train_c)
            val_problem = _problem(config, pool, val_f, val_c)
        else:
            problem = _problem(config, pool, data, caches)
        archive = moeadd.run(config.moeadd_config(rec.evolution_seed), pool, problem)
        best, _ = select_member(archive, val_problem)
        rec.archive = archive.records(pool)
        rec.equations = best.chromosome.render(pool)
        rec.objectives = [float(v) for v in best.objectives]
        rec.matches = [match_equation(eq, truth, config.coeff_tol, pool)
                       for eq, truth in zip(best.chromosome.equations, truths)]
        rec.success = bool(truths) and all(m.success for m in rec.matches)
    except Exception as exc:  # a failed run must never abort the sweep
        log.warning("run %d at noise %.3g%% failed: %s", run, level, exc)
        log.debug("%s", traceback.format_exc())
        rec.error = f"{type(exc).__name__}: {exc}"
        rec.matches = [MatchReport([False] * len(t.equation.terms),
                                   [None] * len(t.equation.terms), False, False)
                       for t in truths]
    rec.seconds = time.perf_counter() - start
    return rec


def level_key(level: float) -> int:
    """Seed index of a noise level: the level in thousandths of a percent.

    Keying seeds on the value (not the list position) makes a single-level
    ``discover`` run reproduce the matching row of a full sweep.
    """
    return int(round(float(level) * 1000))


def _problem(config, pool, fields, caches) -> Problem:
    return Problem(pool, fields, caches, config.fitness_mode, config.boundary_fraction)


def run_experiment(config, runs: int | None = None, seed: int | None = None,
                   noise_levels=None, progress=None) -> ExperimentResult:
    """Full sweep over the configured noise levels.

    ``runs``, ``seed`` and ``noise_levels`` override the config. ``progress``
    is called with each finished :class:`RunRecord`.
    """
    config = load_config(config)
    runs = config.runs if runs is None else int(runs)
    seed = config.seed if seed is None else int(seed)
    levels = list(config.noise_levels if noise_levels is None else noise_levels)
    if runs < 1:
        raise ConfigError("runs must be at least 1")
    fields = config.dataset.load()
    pool = config.build_pool(fields)
    truths = parse_truths(config, pool)
    records = []
    for level in levels:
        for run in range(runs):
            rec = run_single(config, fields, pool, truths, level, run, seed, level_key(level))
            records.append(rec)
            if progress:
                progress(rec)
    stats = aggregate_stats(records, truths, levels)
    return ExperimentResult(config, [t.labels for t in truths],
                            [[t.coefficients[j] for j in range(len(t.labels))] for t in truths],
                            records, stats)


def parse_truths(config: ExperimentConfig, pool: TokenPool) -> list:
    if not config.ground_truth:
        return []
    if len(config.ground_truth) != len(pool.variables):
        raise ConfigError("ground_truth needs one equation per variable")
    return [parse_truth(text, pool, v) for v, text in enumerate(config.ground_truth)]


# -- statistics -------------------------------------------------------------------


@dataclass
class TermStats:
    equation: int
    term: str
    true_coefficient: float
    detection_percent: float
    mean: float | None
    spread: float | None


@dataclass
class LevelStats:
    noise_level: float
    runs: int
    success_percent: float
    one_positive: bool
    mape: float | None
    failed_runs: int
    terms: list


def coefficient_stats(values):
    """Mean and 1.98 standard deviations (None for no values).

    The deviation is the population form (divisor n), so a single detection
    has spread 0 and {1.0, 1.2} gives 1.98 * 0.1.
    """
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None
    # exact rational arithmetic: identical values give a spread of exactly 0
    return float(statistics.mean(vals)), 1.98 * statistics.pstdev(vals)


def aggregate_stats(records, truths, levels=None) -> list:
    """Per noise level: term detection P (%), coefficient mean +- 1.98 sigma over
    detections, success frequency, MAPE over successful runs (target terms
    excluded, they are 1 by normalization), and the one-positive flag."""
    if levels is None:
        levels = sorted({r.level for r in records})
    out = []
    for level in levels:
        recs = [r for r in records if r.level == float(level)]
        terms = []
        for e, truth in enumerate(truths):
            true = truth.coefficients
            for j, label in enumerate(truth.labels):
                hits = [r.matches[e].coefficients[j] for r in recs if r.matches[e].detected[j]]
                mean, spread = coefficient_stats(hits)
                terms.append(TermStats(e, label, true[j],
                                       100.0 * len(hits) / len(recs) if recs else 0.0,
                                       mean, spread))
        errors = []
        for r in recs:
            if not r.success:
                continue
            for e, truth in enumerate(truths):
                for j, c in enumerate(r.matches[e].coefficients):
                    if j != truth.equation.target_idx:
                        t = truth.coefficients[j]
                        errors.append(abs(c - t) / abs(t))
        n_success = sum(r.success for r in recs)
        out.append(LevelStats(float(level), len(recs),
                              100.0 * n_success / len(recs) if recs else 0.0,
                              n_success > 0,
                              100.0 * float(np.mean(errors)) if errors else None,
                              sum(r.error is not None for r in recs), terms))
    return out
