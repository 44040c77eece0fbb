"""Symbolic encoding of candidate equations.

A *token* is an elementary factor (a derivative of an observed variable, a
coordinate, a trigonometric function of a coordinate, ...). A *term* is a
product of distinct tokens and an *equation* is a linear combination of
distinct terms with one designated target term whose coefficient is fixed to
-1. Systems are tuples of equations, one per observed variable.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import GenerationExhaustedError, UnevaluableTokenError

PARAM_TOL = 1e-9

FAMILY_ORDER = {
    "derivative": 0,
    "var_poly": 1,
    "coordinate": 2,
    "grid_poly": 3,
    "inverse": 4,
    "trig": 5,
    "velocity": 6,
}


def _tuplify(obj):
    if isinstance(obj, list):
        return tuple(_tuplify(v) for v in obj)
    return obj


def _fmt(value: float) -> str:
    return repr(round(float(value), 6))


@dataclass(frozen=True)
class Token:
    """One factor. ``key`` identifies the member, ``params`` are its tunable values."""

    family: str
    key: tuple
    params: tuple = ()

    def same_factor(self, other: "Token") -> bool:
        return self.family == other.family and self.key == other.key

    def equals(self, other: "Token", tol: float = PARAM_TOL) -> bool:
        if not self.same_factor(other) or len(self.params) != len(other.params):
            return False
        return all(abs(a - b) <= tol for a, b in zip(self.params, other.params))

    def sort_key(self):
        return (FAMILY_ORDER.get(self.family, 99), self.family, self.key, self.params)

    @property
    def derivative_order(self) -> int:
        """Total derivative order for derivative tokens, 0 otherwise."""
        if self.family == "derivative":
            return int(sum(self.key[1]))
        return 0

    @property
    def complexity(self) -> float:
        n = self.derivative_order
        return float(n) if n >= 1 else 0.5

    def to_json(self):
        return {"family": self.family, "key": self.key, "params": list(self.params)}

    @classmethod
    def from_json(cls, obj) -> "Token":
        return cls(obj["family"], _tuplify(obj["key"]), tuple(float(p) for p in obj["params"]))


# -- token families -----------------------------------------------------------


class TokenFamily:
    """A parametrised class of tokens sharing one evaluation rule."""

    name = "base"

    def __init__(self, is_independent: bool = False, probability: float = 1.0):
        self.is_independent = is_independent
        self.probability = probability

    def members(self) -> list[tuple]:
        raise NotImplementedError

    def members_for(self, variable: int | None) -> list[tuple]:
        """Members usable in an equation describing ``variable`` (``None``: all)."""
        return self.members()

    def param_ranges(self, key) -> list[tuple]:
        """List of ``(low, high, is_integer)`` per parameter."""
        return []

    def make(self, key, rng=None) -> Token:
        params = []
        for lo, hi, is_int in self.param_ranges(key):
            if rng is None:
                params.append(float(lo))
            elif is_int:
                params.append(float(rng.integers(int(lo), int(hi) + 1)))
            else:
                params.append(float(rng.uniform(lo, hi)))
        return Token(self.name, key, tuple(params))

    def sample(self, rng, exclude=()) -> Token | None:
        keys = [k for k in self.members() if k not in exclude]
        if not keys:
            return None
        return self.make(keys[rng.integers(len(keys))], rng)

    def perturb(self, token: Token, rng) -> Token:
        """Bounded uniform increment of one parameter, clamped to its range."""
        ranges = self.param_ranges(token.key)
        if not ranges:
            return token
        params = list(token.params)
        j = int(rng.integers(len(ranges)))
        lo, hi, is_int = ranges[j]
        if is_int:
            step = 1.0 if rng.random() < 0.5 else -1.0
        else:
            step = rng.uniform(-0.1, 0.1) * (hi - lo)
        params[j] = float(np.clip(params[j] + step, lo, hi))
        return Token(token.family, token.key, tuple(params))

    def evaluate(self, token: Token, ctx) -> np.ndarray:
        raise NotImplementedError

    def render(self, token: Token) -> str:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"family": self.name, "autonomous": self.is_independent,
                "probability": self.probability}


def _power_suffix(text: str, power: float, wrap: bool) -> str:
    p = int(power)
    if p == 1:
        return text
    return f"({text})^{p}" if wrap else f"{text}^{p}"


class DerivativeFamily(TokenFamily):
    """Partial derivatives (order 0 = the variable itself) of observed variables.

    Keys are ``(variable_index, multi_index)``; the single parameter is an
    integer power.
    """

    name = "derivative"

    def __init__(self, variables: Sequence[str], axis_names: Sequence[str],
                 max_orders: Sequence[int], max_power: int = 1, mixed: bool = False,
                 cross_derivatives: bool = True, probability: float = 1.0):
        super().__init__(True, probability)
        # False: an equation may differentiate only its own variable, so linear
        # identities between derivatives of different variables cannot form
        self.cross_derivatives = bool(cross_derivatives)
        self.variables = tuple(variables)
        self.axis_names = tuple(axis_names)
        self.max_orders = tuple(int(m) for m in max_orders)
        if len(self.max_orders) != len(self.axis_names):
            raise ValueError("max_orders needs one entry per axis")
        self.max_power = int(max_power)
        self.mixed = mixed
        ndim = len(self.axis_names)
        multis = [(0,) * ndim]
        for axis, top in enumerate(self.max_orders):
            for n in range(1, top + 1):
                m = [0] * ndim
                m[axis] = n
                multis.append(tuple(m))
        if mixed:
            top = max(self.max_orders)
            for m in itertools.product(*(range(t + 1) for t in self.max_orders)):
                if sum(1 for v in m if v) > 1 and sum(m) <= top:
                    multis.append(tuple(m))
        self._multis = multis

    @property
    def max_total_order(self) -> int:
        return max(sum(m) for m in self._multis)

    def members(self):
        return [(v, m) for v in range(len(self.variables)) for m in self._multis]

    def members_for(self, variable):
        if variable is None or self.cross_derivatives:
            return self.members()
        return [(v, m) for v, m in self.members() if v == variable or sum(m) == 0]

    def derivative_members(self, variable: int):
        return [(variable, m) for m in self._multis if sum(m) >= 1]

    def param_ranges(self, key):
        return [(1, self.max_power, True)]

    def make(self, key, rng=None):
        # power 1 dominates: higher powers are drawn with probability 1/4 each step
        power = 1
        if rng is not None:
            while power < self.max_power and rng.random() < 0.25:
                power += 1
        return Token(self.name, key, (float(power),))

    def evaluate(self, token, ctx):
        var, multi = token.key
        values = ctx.derivative(var, multi)
        power = int(token.params[0]) if token.params else 1
        return values if power == 1 else values ** power

    def render(self, token):
        var, multi = token.key
        name = self.variables[var]
        n = sum(multi)
        power = token.params[0] if token.params else 1
        if n == 0:
            return _power_suffix(name, power, wrap=False)
        den = "".join(f"d{self.axis_names[a]}^{k}" for a, k in enumerate(multi) if k)
        return _power_suffix(f"d^{n}{name}/{den}", power, wrap=True)

    def describe(self):
        d = super().describe()
        d.update(variables=list(self.variables), axis_names=list(self.axis_names),
                 max_orders=list(self.max_orders), max_power=self.max_power, mixed=self.mixed,
                 cross_derivatives=self.cross_derivatives)
        return d


class CoordinateFamily(TokenFamily):
    """Grid coordinates raised to an integer power."""

    name = "coordinate"

    def __init__(self, axis_names, axes=None, max_power: int = 1, is_independent=False,
                 probability=1.0):
        super().__init__(is_independent, probability)
        self.axis_names = tuple(axis_names)
        self.max_power = int(max_power)

    def members(self):
        return [(a,) for a in range(len(self.axis_names))]

    def param_ranges(self, key):
        return [(1, self.max_power, True)]

    def evaluate(self, token, ctx):
        return ctx.coordinate(token.key[0]) ** int(token.params[0])

    def render(self, token):
        return _power_suffix(self.axis_names[token.key[0]], token.params[0], wrap=False)

    def describe(self):
        d = super().describe()
        d.update(axis_names=list(self.axis_names), max_power=self.max_power)
        return d


class InverseFamily(TokenFamily):
    """Reciprocals ``1 / x_i`` of the grid coordinates."""

    name = "inverse"

    def __init__(self, axis_names, is_independent=False, probability=1.0):
        super().__init__(is_independent, probability)
        self.axis_names = tuple(axis_names)

    def members(self):
        return [(a,) for a in range(len(self.axis_names))]

    def evaluate(self, token, ctx):
        x = ctx.coordinate(token.key[0])
        if np.any(x == 0):
            raise UnevaluableTokenError(f"1/{self.axis_names[token.key[0]]} undefined at 0")
        return 1.0 / x

    def render(self, token):
        return f"1/{self.axis_names[token.key[0]]}"

    def describe(self):
        d = super().describe()
        d.update(axis_names=list(self.axis_names))
        return d


class GridPolyFamily(TokenFamily):
    """Polynomials ``sum_j p_j x_i^j`` of one coordinate with tunable coefficients."""

    name = "grid_poly"

    def __init__(self, axis_names, max_degree=2, coeff_range=(-1.0, 1.0),
                 is_independent=False, probability=1.0):
        super().__init__(is_independent, probability)
        self.axis_names = tuple(axis_names)
        self.max_degree = int(max_degree)
        self.coeff_range = tuple(coeff_range)

    def members(self):
        return [(a, n) for a in range(len(self.axis_names)) for n in range(1, self.max_degree + 1)]

    def param_ranges(self, key):
        lo, hi = self.coeff_range
        return [(lo, hi, False)] * (key[1] + 1)

    def evaluate(self, token, ctx):
        x = ctx.coordinate(token.key[0])
        return np.polynomial.polynomial.polyval(x, np.asarray(token.params))

    def render(self, token):
        x = self.axis_names[token.key[0]]
        parts = [_fmt(token.params[0])] + [f"{_fmt(p)}*{x}^{j}" for j, p in
                                           enumerate(token.params[1:], start=1)]
        return "(" + " + ".join(parts) + ")"

    def describe(self):
        d = super().describe()
        d.update(axis_names=list(self.axis_names), max_degree=self.max_degree,
                 coeff_range=list(self.coeff_range))
        return d


class VarPolyFamily(TokenFamily):
    """Polynomials ``sum_j p_j u^j`` of an observed variable."""

    name = "var_poly"

    def __init__(self, variables, max_degree=2, coeff_range=(-1.0, 1.0), is_independent=True,
                 probability=1.0):
        super().__init__(is_independent, probability)
        self.variables = tuple(variables)
        self.max_degree = int(max_degree)
        self.coeff_range = tuple(coeff_range)

    def members(self):
        return [(v, n) for v in range(len(self.variables)) for n in range(1, self.max_degree + 1)]

    def param_ranges(self, key):
        lo, hi = self.coeff_range
        return [(lo, hi, False)] * (key[1] + 1)

    def evaluate(self, token, ctx):
        u = ctx.derivative(token.key[0], None)
        return np.polynomial.polynomial.polyval(u, np.asarray(token.params))

    def render(self, token):
        u = self.variables[token.key[0]]
        parts = [_fmt(token.params[0])] + [f"{_fmt(p)}*{u}^{j}" for j, p in
                                           enumerate(token.params[1:], start=1)]
        return "(" + " + ".join(parts) + ")"

    def describe(self):
        d = super().describe()
        d.update(variables=list(self.variables), max_degree=self.max_degree,
                 coeff_range=list(self.coeff_range))
        return d


class TrigFamily(TokenFamily):
    """``sin(p x_i)`` and ``cos(p x_i)`` with tunable frequency ``p``."""

    name = "trig"

    def __init__(self, axis_names, freq_range=(0.5, 2.0), is_independent=False,
                 probability=1.0):
        super().__init__(is_independent, probability)
        self.axis_names = tuple(axis_names)
        self.freq_range = tuple(freq_range)

    def members(self):
        return [(fn, a) for fn in ("cos", "sin") for a in range(len(self.axis_names))]

    def param_ranges(self, key):
        return [(self.freq_range[0], self.freq_range[1], False)]

    def evaluate(self, token, ctx):
        fn = np.sin if token.key[0] == "sin" else np.cos
        return fn(token.params[0] * ctx.coordinate(token.key[1]))

    def render(self, token):
        return f"{token.key[0]}({_fmt(token.params[0])}*{self.axis_names[token.key[1]]})"

    def describe(self):
        d = super().describe()
        d.update(axis_names=list(self.axis_names), freq_range=list(self.freq_range))
        return d


class VelocityFamily(TokenFamily):
    """Measured velocity components supplied as arrays on the data grid."""

    name = "velocity"

    def __init__(self, components: dict, is_independent=False, probability=1.0):
        super().__init__(is_independent, probability)
        self.names = tuple(components)
        self.arrays = {i: np.asarray(components[n], dtype=float) for i, n in enumerate(self.names)}

    def members(self):
        return [(i,) for i in range(len(self.names))]

    def evaluate(self, token, ctx):
        return ctx.external(self.names[token.key[0]], self.arrays[token.key[0]])

    def render(self, token):
        return self.names[token.key[0]]

    def describe(self):
        d = super().describe()
        d.update(components=list(self.names))
        return d


class TokenPool:
    """All token families available to the search.

    The derivative family is mandatory. Families marked independent
    (autonomous) may stand alone in a term; other families only act as
    multipliers of independent factors.
    """

    def __init__(self, families: Sequence[TokenFamily]):
        self.families = list(families)
        self._by_name = {f.name: f for f in self.families}
        if "derivative" not in self._by_name:
            raise ValueError("a token pool must contain the derivative family")
        if len(self._by_name) != len(self.families):
            raise ValueError("duplicate family names in pool")

    @property
    def derivatives(self) -> DerivativeFamily:
        return self._by_name["derivative"]

    @property
    def variables(self):
        return self.derivatives.variables

    @property
    def axis_names(self):
        return self.derivatives.axis_names

    def family(self, name: str) -> TokenFamily:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnevaluableTokenError(f"unknown token family {name!r}") from None

    def is_independent(self, token: Token) -> bool:
        return self.family(token.family).is_independent

    def allows(self, token: Token, variable: int) -> bool:
        """Whether ``token`` may appear in the equation of ``variable``."""
        d = self.derivatives
        if token.family != d.name or d.cross_derivatives:
            return True
        var, multi = token.key
        return var == variable or sum(multi) == 0

    def all_members(self, independent_only=False):
        return [(f, k) for f in self.families for k in f.members()
                if f.is_independent or not independent_only]

    def sample_token(self, rng, independent_only=False, exclude: Sequence[Token] = (),
                     variable: int | None = None):
        """Random token; family by probability, member uniformly.

        ``variable`` restricts members to those allowed in that variable's equation.
        """
        fams = [f for f in self.families if (f.is_independent or not independent_only)]
        options = []
        for f in fams:
            taken = {t.key for t in exclude if t.family == f.name}
            keys = [k for k in f.members_for(variable) if k not in taken]
            if keys:
                options.append((f, keys))
        if not options:
            return None
        probs = np.array([f.probability for f, _ in options], dtype=float)
        f, keys = options[int(rng.choice(len(options), p=probs / probs.sum()))]
        return f.make(keys[int(rng.integers(len(keys)))], rng)

    def render(self, token: Token) -> str:
        return self.family(token.family).render(token)

    def evaluate(self, token: Token, ctx) -> np.ndarray:
        return self.family(token.family).evaluate(token, ctx)

    def describe(self):
        return [f.describe() for f in self.families]


# -- terms and equations ------------------------------------------------------


@dataclass(frozen=True)
class Term:
    """Product of distinct tokens, stored in canonical order."""

    factors: tuple

    def __post_init__(self):
        if not self.factors:
            raise ValueError("a term needs at least one factor")
        ordered = tuple(sorted(self.factors, key=Token.sort_key))
        for a, b in zip(ordered, ordered[1:]):
            if a.same_factor(b):
                raise ValueError(f"duplicate factor {a} in term")
        object.__setattr__(self, "factors", ordered)

    def __len__(self):
        return len(self.factors)

    def equals(self, other: "Term", tol: float = PARAM_TOL) -> bool:
        return len(self.factors) == len(other.factors) and all(
            a.equals(b, tol) for a, b in zip(self.factors, other.factors))

    def sort_key(self):
        return tuple(t.sort_key() for t in self.factors)

    def shape(self) -> tuple:
        """Factor identities without parameters."""
        return tuple((t.family, t.key) for t in self.factors)

    def has_derivative_of(self, variable: int) -> bool:
        return any(t.family == "derivative" and t.key[0] == variable and t.derivative_order >= 1
                   for t in self.factors)

    @property
    def complexity(self) -> float:
        return sum(t.complexity for t in self.factors)

    def split(self, pool: TokenPool):
        """Return ``(multiplier_factors, independent_factors)``."""
        indep = tuple(t for t in self.factors if pool.is_independent(t))
        mult = tuple(t for t in self.factors if not pool.is_independent(t))
        return mult, indep

    def render(self, pool: TokenPool) -> str:
        return " * ".join(pool.render(t) for t in self.factors)

    def to_json(self):
        return [t.to_json() for t in self.factors]

    @classmethod
    def from_json(cls, obj) -> "Term":
        return cls(tuple(Token.from_json(t) for t in obj))


@dataclass
class Equation:
    """Linear combination of terms ``sum_i b_i F_i + bias = 0`` with ``b_target = -1``.

    ``coefficients`` and ``active`` are ``None`` until the equation is fitted.
    """

    terms: tuple
    target_idx: int
    sparsity: float
    variable: int = 0
    coefficients: np.ndarray | None = None
    bias: float = 0.0
    active: np.ndarray | None = None

    def __post_init__(self):
        self.terms = tuple(self.terms)
        if not 0 <= self.target_idx < len(self.terms):
            raise ValueError("target index out of range")
        if not self.sparsity > 0:
            raise ValueError("sparsity constant must be positive")

    @property
    def target(self) -> Term:
        return self.terms[self.target_idx]

    @property
    def is_fitted(self) -> bool:
        return self.coefficients is not None

    def active_mask(self) -> np.ndarray:
        if self.active is None:
            return np.ones(len(self.terms), dtype=bool)
        return np.asarray(self.active, dtype=bool)

    def active_terms(self):
        return [t for t, a in zip(self.terms, self.active_mask()) if a]

    def unfitted(self, **changes) -> "Equation":
        changes.setdefault("coefficients", None)
        changes.setdefault("active", None)
        changes.setdefault("bias", 0.0)
        return replace(self, **changes)

    def check_invariants(self, max_factors: int | None = None):
        for i, a in enumerate(self.terms):
            for b in self.terms[i + 1:]:
                if a.equals(b):
                    raise ValueError("equation contains duplicate terms")
            if max_factors is not None and len(a) > max_factors:
                raise ValueError("term exceeds the factor limit")
        if not any(t.has_derivative_of(self.variable) for t in self.terms):
            raise ValueError("equation lacks a derivative of its variable")
        if not self.target.has_derivative_of(self.variable):
            raise ValueError("target term lacks a derivative of its variable")

    def rhs_coefficients(self) -> dict:
        """Map term index -> coefficient in ``target = sum_i c_i F_i + bias`` form."""
        if not self.is_fitted:
            raise ValueError("equation is not fitted")
        mask = self.active_mask()
        return {i: float(self.coefficients[i]) for i in range(len(self.terms))
                if i != self.target_idx and mask[i]}

    def render(self, pool: TokenPool) -> str:
        """Render as ``c_target * target + c_1 * T_1 + ... = 0`` with ``c_target = 1``.

        Non-target terms follow the target in canonical order; inactive terms
        and a zero bias are omitted.
        """
        mask = self.active_mask()
        coeffs = (-np.asarray(self.coefficients) if self.is_fitted
                  else np.ones(len(self.terms)))
        order = sorted((i for i in range(len(self.terms)) if i != self.target_idx and mask[i]),
                       key=lambda i: self.terms[i].sort_key())
        parts = [(1.0, self.target.render(pool))]
        parts += [(float(coeffs[i]), self.terms[i].render(pool)) for i in order]
        if self.is_fitted and round(float(self.bias), 6) != 0:
            parts.append((-float(self.bias), None))
        out = ""
        for k, (c, text) in enumerate(parts):
            body = _fmt(abs(c)) if text is None else f"{_fmt(abs(c))} * {text}"
            if k == 0:
                out = body if c >= 0 else f"-{body}"
            else:
                out += f" {'+' if c >= 0 else '-'} {body}"
        return out + " = 0"

    def to_json(self):
        return {
            "terms": [t.to_json() for t in self.terms],
            "target_idx": self.target_idx,
            "sparsity": self.sparsity,
            "variable": self.variable,
            "coefficients": None if self.coefficients is None else
            [float(c) for c in self.coefficients],
            "bias": float(self.bias),
            "active": None if self.active is None else [bool(a) for a in self.active],
        }

    @classmethod
    def from_json(cls, obj) -> "Equation":
        return cls(
            terms=tuple(Term.from_json(t) for t in obj["terms"]),
            target_idx=int(obj["target_idx"]),
            sparsity=float(obj["sparsity"]),
            variable=int(obj.get("variable", 0)),
            coefficients=None if obj.get("coefficients") is None else
            np.asarray(obj["coefficients"], dtype=float),
            bias=float(obj.get("bias", 0.0)),
            active=None if obj.get("active") is None else np.asarray(obj["active"], dtype=bool),
        )


@dataclass
class SystemChromosome:
    """One equation per observed variable; equation ``i`` describes variable ``i``."""

    equations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.equations = tuple(self.equations)
        for i, eq in enumerate(self.equations):
            if eq.variable != i:
                raise ValueError(f"equation {i} describes variable {eq.variable}")

    def __len__(self):
        return len(self.equations)

    def render(self, pool: TokenPool) -> list[str]:
        return [eq.render(pool) for eq in self.equations]

    def to_json(self):
        return [eq.to_json() for eq in self.equations]

    @classmethod
    def from_json(cls, obj) -> "SystemChromosome":
        return cls(tuple(Equation.from_json(e) for e in obj))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# -- operations ---------------------------------------------------------------


def complexity(eq: Equation) -> float:
    """Sum of factor complexities over active terms (all terms if unfitted).

    Derivatives of total order ``n >= 1`` count ``n``, every other factor 0.5.
    The bias contributes nothing.
    """
    mask = eq.active_mask().copy()
    mask[eq.target_idx] = True
    return float(sum(t.complexity for t, a in zip(eq.terms, mask) if a))


def dominates(a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"objective vectors differ in length: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def _match_terms(terms_a, terms_b, tol) -> bool:
    if len(terms_a) != len(terms_b):
        return False
    used = [False] * len(terms_b)
    for ta in terms_a:
        for j, tb in enumerate(terms_b):
            if not used[j] and ta.equals(tb, tol):
                used[j] = True
                break
        else:
            return False
    return True


def structural_equal(a, b, tol: float = PARAM_TOL) -> bool:
    """Term-multiset equality, ignoring coefficients, target choice and sparsity.

    Accepts two equations or two system chromosomes.
    """
    if isinstance(a, SystemChromosome):
        return len(a) == len(b) and all(structural_equal(x, y, tol)
                                        for x, y in zip(a.equations, b.equations))
    return _match_terms(a.terms, b.terms, tol)


def term_in(term: Term, terms, tol: float = PARAM_TOL) -> bool:
    return any(term.equals(t, tol) for t in terms)


def shape_in(term: Term, terms) -> bool:
    """True if some term has the same factors up to parameter values.

    Equations never hold two such terms: e.g. ``u_t sin(0.5x)`` next to
    ``u_t sin(0.57x)`` would make a near-collinear pair whose fit is a
    spurious near-identity.
    """
    shape = term.shape()
    return any(shape == t.shape() for t in terms)


def random_term(pool: TokenPool, rng, max_factors: int, require_derivative_of: int | None = None,
                n_factors: int | None = None, variable: int | None = None) -> Term:
    """Random product of distinct tokens with at least one independent factor."""
    n = int(rng.integers(1, max_factors + 1)) if n_factors is None else n_factors
    if require_derivative_of is not None:
        keys = pool.derivatives.derivative_members(require_derivative_of)
        first = pool.derivatives.make(keys[int(rng.integers(len(keys)))], rng)
    else:
        first = pool.sample_token(rng, independent_only=True, variable=variable)
    factors = [first]
    while len(factors) < n:
        tok = pool.sample_token(rng, exclude=factors, variable=variable)
        if tok is None:
            break
        factors.append(tok)
    return Term(tuple(factors))


def log_uniform(rng, interval) -> float:
    lo, hi = np.log10(interval[0]), np.log10(interval[1])
    return float(10.0 ** rng.uniform(lo, hi))


def random_equation(pool: TokenPool, variable: int, n_terms: int, max_factors: int, rng,
                    sparsity_interval=(1e-9, 1.0)) -> Equation:
    """Random equation with ``n_terms`` distinct terms describing ``variable``.

    One term is forced to contain a derivative of ``variable`` and the target
    is drawn among such terms.
    """
    if not pool.derivatives.derivative_members(variable):
        raise ValueError("pool has no derivative tokens for the variable")
    terms: list[Term] = []
    budget = 100 * n_terms
    attempts = 0
    anchor = int(rng.integers(n_terms))
    while len(terms) < n_terms:
        attempts += 1
        if attempts > budget:
            raise GenerationExhaustedError(
                f"could not build {n_terms} distinct terms after {budget} attempts")
        # the anchor slot forces a derivative unless an earlier term already has one
        anchored = any(t.has_derivative_of(variable) for t in terms)
        need = variable if len(terms) == anchor and not anchored else None
        term = random_term(pool, rng, max_factors, require_derivative_of=need, variable=variable)
        if not shape_in(term, terms):
            terms.append(term)
    candidates = [i for i, t in enumerate(terms) if t.has_derivative_of(variable)]
    target = candidates[int(rng.integers(len(candidates)))]
    return Equation(tuple(terms), target, log_uniform(rng, sparsity_interval), variable)


def random_system(pool: TokenPool, n_terms: int, max_factors: int, rng,
                  sparsity_interval=(1e-9, 1.0)) -> SystemChromosome:
    return SystemChromosome(tuple(
        random_equation(pool, v, n_terms, max_factors, rng, sparsity_interval)
        for v in range(len(pool.variables))))


def evaluate_term(term: Term, pool: TokenPool, ctx) -> np.ndarray:
    """Element-wise product of factor values, flattened in row-major node order."""
    if ctx.n_nodes == 0:
        raise ValueError("cannot evaluate a term on an empty grid")
    out = None
    for tok in term.factors:
        v = pool.evaluate(tok, ctx)
        out = np.array(v, dtype=float, copy=True) if out is None else out * v
    return np.broadcast_to(out, ctx.shape).ravel()


class DataContext:
    """Token evaluation on observed data through per-variable derivative caches."""

    def __init__(self, caches: dict, variables: Sequence[str], externals: dict | None = None):
        self.caches = caches
        self.variables = tuple(variables)
        first = caches[self.variables[0]].base
        self.axes = first.axes
        self.shape = first.shape
        self.n_nodes = int(np.prod(self.shape))
        self._coords = {}
        self.externals = externals or {}

    def derivative(self, var: int, multi) -> np.ndarray:
        cache = self.caches[self.variables[var]]
        if multi is None:
            multi = (0,) * len(self.shape)
        try:
            return cache[multi].values
        except KeyError:
            raise UnevaluableTokenError(
                f"derivative {multi} of {self.variables[var]!r} not in cache "
                f"(max order {cache.max_order})") from None

    def coordinate(self, axis: int) -> np.ndarray:
        if axis not in self._coords:
            shape = [1] * len(self.shape)
            shape[axis] = self.shape[axis]
            self._coords[axis] = self.axes[axis].reshape(shape)
        return self._coords[axis]

    def external(self, name, array) -> np.ndarray:
        return np.asarray(self.externals.get(name, array))
