"""Coefficient estimation and the discrepancy quality objective."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import IllPosedFitError, TrivialEquationError
from .model import Equation, Term, TokenPool, evaluate_term

DEACTIVATION_TOL = 1e-9
MAX_CONDITION = 1e12


@dataclass
class FeatureSystem:
    features: np.ndarray
    target: np.ndarray
    weights: np.ndarray
    column_term_map: list


@dataclass
class FitResult:
    """Outcome of :func:`fit_coefficients`.

    ``coefficients`` has one entry per equation term: ``-1`` for the target,
    exactly ``0`` for deactivated terms.
    """

    coefficients: np.ndarray
    bias: float
    active_mask: np.ndarray
    residual_norm: float
    condition_number: float = 1.0
    standardized: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def apply(self, eq: Equation) -> Equation:
        return eq.unfitted(coefficients=self.coefficients.copy(), bias=float(self.bias),
                           active=self.active_mask.copy())


class TermEvaluator:
    """Memoised term values (flattened) for one data context."""

    def __init__(self, pool: TokenPool, ctx, max_entries: int = 512):
        self.pool = pool
        self.ctx = ctx
        self.max_entries = max_entries
        self._store: OrderedDict = OrderedDict()

    @property
    def n_nodes(self) -> int:
        return self.ctx.n_nodes

    def __call__(self, term: Term) -> np.ndarray:
        key = term.sort_key()
        hit = self._store.get(key)
        if hit is not None:
            self._store.move_to_end(key)
            return hit
        value = evaluate_term(term, self.pool, self.ctx)
        value = np.ascontiguousarray(value)
        value.setflags(write=False)
        self._store[key] = value
        if len(self._store) > self.max_entries:
            self._store.popitem(last=False)
        return value


def _ramp(n: int, fraction: float) -> np.ndarray:
    if fraction <= 0 or n < 3:
        return np.ones(n)
    band = fraction * (n - 1)
    d = np.minimum(np.arange(n), np.arange(n)[::-1]).astype(float)
    return np.where(d < band, 0.5 * (1.0 - np.cos(np.pi * d / band)), 1.0)


def domain_weight(grid, boundary_fraction: float = 0.1) -> np.ndarray:
    """Per-node weights, 0 on the boundary and cosine-ramped to 1 inside.

    ``grid`` is a shape tuple or a sequence of axis coordinate arrays. Returns
    the flattened (row-major) weight vector.
    """
    if not 0 <= boundary_fraction < 0.5:
        raise ValueError("boundary_fraction must lie in [0, 0.5)")
    if all(np.ndim(g) == 0 for g in grid):
        shape = tuple(int(g) for g in grid)
    else:
        shape = tuple(len(a) for a in grid)
    w = np.ones(shape)
    for axis, n in enumerate(shape):
        r = _ramp(n, boundary_fraction)
        s = [1] * len(shape)
        s[axis] = n
        w = w * r.reshape(s)
    return w.ravel()


def feature_system(eq: Equation, evaluator, weights) -> FeatureSystem:
    cols = [i for i in range(len(eq.terms)) if i != eq.target_idx]
    target = evaluator(eq.target)
    if cols:
        features = np.column_stack([evaluator(eq.terms[i]) for i in cols])
    else:
        features = np.zeros((target.size, 0))
    return FeatureSystem(features, target, np.asarray(weights, dtype=float), cols)


def _weighted_standardize(X, w):
    mean = w @ X
    centred = X - mean
    std = np.sqrt(w @ (centred * centred))
    return centred, mean, std


def weighted_lstsq(A, y, weights):
    """Solve ``min ||W^(1/2) (A b - y)||`` and report the normal-matrix condition number."""
    sw = np.sqrt(weights)
    As = A * sw[:, None]
    norms = np.linalg.norm(As, axis=0)
    if np.any(norms == 0):
        raise IllPosedFitError("zero column in weighted design matrix")
    sv = np.linalg.svd(As / norms, compute_uv=False)
    cond = float((sv[0] / sv[-1]) ** 2) if sv[-1] > 0 else np.inf
    if cond > MAX_CONDITION:
        raise IllPosedFitError(f"normal system condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    b, *_ = np.linalg.lstsq(As, y * sw, rcond=None)
    return b, cond


def fit_coefficients(eq: Equation, evaluator, weights) -> FitResult:
    """Sparse coefficient fit for ``target = sum_i b_i F_i + bias``.

    Stage one runs weighted L1 coordinate descent with penalty ``eq.sparsity``
    on standardised columns and drops terms whose standardised coefficient is
    below ``1e-9``. Stage two refits the survivors and a bias column by
    weighted least squares.
    """
    if len(eq.terms) < 2:
        raise TrivialEquationError("equation has no right-hand-side terms")
    system = feature_system(eq, evaluator, weights)
    X, y, w = system.features, system.target, system.weights
    n, p = X.shape
    if n <= len(eq.terms):
        raise IllPosedFitError("fewer nodes than terms")
    if w.sum() <= 0:
        raise IllPosedFitError("all weights are zero")
    omega = w / w.sum()
    Xc, _, xstd = _weighted_standardize(X, omega)
    yc, _, ystd = _weighted_standardize(y[:, None], omega)
    ystd = float(ystd[0])
    usable = xstd > 0
    beta = np.zeros(p)
    if ystd > 0 and np.any(usable):
        Xs = Xc[:, usable] / xstd[usable]
        ys = yc[:, 0] / ystd
        Xw = Xs * omega[:, None]
        gram = Xw.T @ Xs
        corr = Xw.T @ ys
        beta[usable] = kernels.lasso_cd(gram, corr, float(eq.sparsity))
    keep = np.abs(beta) >= DEACTIVATION_TOL
    if not np.any(keep):
        raise TrivialEquationError("sparsity stage removed every term")
    A = np.column_stack([X[:, keep], np.ones(n)])
    b, cond = weighted_lstsq(A, y, w)
    coefficients = np.zeros(len(eq.terms))
    coefficients[eq.target_idx] = -1.0
    active = np.zeros(len(eq.terms), dtype=bool)
    active[eq.target_idx] = True
    for col, k in zip(np.flatnonzero(keep), range(len(b) - 1)):
        coefficients[system.column_term_map[col]] = b[k]
        active[system.column_term_map[col]] = True
    # a refit coefficient of exactly zero would break the active/inactive invariant
    active &= (coefficients != 0)
    residual = A @ b - y
    return FitResult(coefficients, float(b[-1]), active,
                     float(np.sqrt(w @ (residual * residual))), cond, beta)


def bias_only_fit(eq: Equation, evaluator, weights) -> FitResult:
    """Fit of the degenerate form ``target = const``."""
    y = evaluator(eq.target)
    w = np.asarray(weights, dtype=float)
    bias = float(w @ y / w.sum())
    coefficients = np.zeros(len(eq.terms))
    coefficients[eq.target_idx] = -1.0
    active = np.zeros(len(eq.terms), dtype=bool)
    active[eq.target_idx] = True
    r = y - bias
    return FitResult(coefficients, bias, active, float(np.sqrt(w @ (r * r))))


def residual(eq: Equation, fit: FitResult, evaluator) -> np.ndarray:
    r = np.full(evaluator.n_nodes, fit.bias, dtype=float)
    for i, term in enumerate(eq.terms):
        if fit.active_mask[i] and fit.coefficients[i] != 0:
            r += fit.coefficients[i] * evaluator(term)
    return r


def discrepancy_fitness(eq: Equation, fit: FitResult, evaluator, weights) -> float:
    """Weighted residual norm divided by the square root of the node count."""
    r = residual(eq, fit, evaluator)
    w = np.asarray(weights, dtype=float)
    return float(np.sqrt(w @ (r * r)) / np.sqrt(r.size))
