"""Objective vectors for system chromosomes on one preprocessed dataset."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (IllPosedFitError, NotSolvableError, TrivialEquationError,
                     UnevaluableTokenError)
from .fitting import (FitResult, TermEvaluator, bias_only_fit, discrepancy_fitness, domain_weight,
                      fit_coefficients, residual)
from .model import DataContext, SystemChromosome, TokenPool, complexity
from .solver import PENALTY, solution_fitness

log = logging.getLogger(__name__)

FITNESS_MODES = ("discrepancy", "solution")
FALLBACK_OFFSET = 100.0


@dataclass
class Problem:
    """Everything needed to turn a chromosome into its objective vector.

    ``objectives`` returns ``(Q_0, C_0, Q_1, C_1, ...)``. In ``"solution"``
    mode Q is the percent deviation of the integrated system from the data.
    Systems that cannot be integrated fall back to ``100 +`` their relative
    weighted discrepancy in percent: 100 is the error of predicting zero, so
    any solvable candidate with predictive value ranks ahead of them.
    """

    pool: TokenPool
    fields: list
    caches: dict
    fitness_mode: str = "discrepancy"
    boundary_fraction: float = 0.1
    max_solver_steps: int = 50000

    def __post_init__(self):
        if self.fitness_mode not in FITNESS_MODES:
            raise ValueError(f"fitness mode must be one of {FITNESS_MODES}")
        names = [f.var_name for f in self.fields]
        self.ctx = DataContext(self.caches, names)
        self.evaluator = TermEvaluator(self.pool, self.ctx)
        self.weights = domain_weight(self.fields[0].shape, self.boundary_fraction)

    @property
    def n_objectives(self) -> int:
        return 2 * len(self.fields)

    def fit(self, chromosome: SystemChromosome):
        """Fit every equation; returns the fitted chromosome and per-equation failure flags."""
        fitted, failed = [], []
        for eq in chromosome.equations:
            try:
                try:
                    result = fit_coefficients(eq, self.evaluator, self.weights)
                except TrivialEquationError:
                    result = bias_only_fit(eq, self.evaluator, self.weights)
                fitted.append(result.apply(eq))
                failed.append(False)
            except (IllPosedFitError, UnevaluableTokenError, FloatingPointError) as exc:
                log.debug("fit failed: %s", exc)
                fitted.append(eq.unfitted())
                failed.append(True)
        return SystemChromosome(tuple(fitted)), failed

    def _relative_discrepancy(self, eq) -> float:
        fit = FitResult(np.asarray(eq.coefficients), eq.bias, eq.active_mask(), 0.0)
        r = residual(eq, fit, self.evaluator)
        target = self.evaluator(eq.target)
        den = np.sqrt(self.weights @ (target * target))
        if den == 0:
            return PENALTY
        return float(100.0 * np.sqrt(self.weights @ (r * r)) / den)

    def quality(self, fitted: SystemChromosome, failed) -> list:
        if self.fitness_mode == "solution" and not any(failed):
            try:
                return [min(q, PENALTY) for q in
                        solution_fitness(fitted, self.fields, self.caches,
                                         max_steps=self.max_solver_steps)]
            except NotSolvableError as exc:
                log.debug("solution fitness unavailable (%s); using discrepancy", exc)
        out = []
        for eq, bad in zip(fitted.equations, failed):
            if bad:
                out.append(PENALTY)
            elif self.fitness_mode == "solution":
                out.append(min(FALLBACK_OFFSET + self._relative_discrepancy(eq), PENALTY))
            else:
                fit = FitResult(np.asarray(eq.coefficients), eq.bias, eq.active_mask(), 0.0)
                q = discrepancy_fitness(eq, fit, self.evaluator, self.weights)
                out.append(min(q, PENALTY) if np.isfinite(q) else PENALTY)
        return out

    def evaluate(self, chromosome: SystemChromosome):
        """Return ``(fitted_chromosome, objective_vector)``."""
        fitted, failed = self.fit(chromosome)
        with np.errstate(over="ignore", invalid="ignore"):
            q = self.quality(fitted, failed)
        objectives = []
        for eq, qi in zip(fitted.equations, q):
            objectives.extend([float(qi), complexity(eq)])
        return fitted, np.asarray(objectives, dtype=float)
