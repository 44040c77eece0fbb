"""Shared helpers for the test suite."""
import numpy as np
import pytest

from eqsearch.grid import GridField
from eqsearch.model import DerivativeFamily, CoordinateFamily, Equation, Term, Token, TokenPool


def d(var, *multi, power=1):
    """Derivative token of variable ``var`` with multi-index ``multi``."""
    return Token("derivative", (var, tuple(multi)), (float(power),))


def coord(axis, power=1):
    return Token("coordinate", (axis,), (float(power),))


def term(*factors):
    return Term(tuple(factors))


def fitted(terms, target_idx, coefficients, bias=0.0, variable=0, sparsity=1e-6):
    """Equation with given coefficients (``-1`` at the target) and all terms active."""
    return Equation(tuple(terms), target_idx, sparsity, variable,
                    np.asarray(coefficients, dtype=float), bias,
                    np.ones(len(terms), dtype=bool))


def pool_1d(variables=("u",), max_order=2, cross=True, coordinate=False):
    fams = [DerivativeFamily(variables, ("t",), (max_order,), cross_derivatives=cross)]
    if coordinate:
        fams.append(CoordinateFamily(("t",)))
    return TokenPool(fams)


def pool_2d(max_orders=(1, 3), coordinate=False):
    fams = [DerivativeFamily(("u",), ("t", "x"), max_orders)]
    if coordinate:
        fams.append(CoordinateFamily(("t", "x")))
    return TokenPool(fams)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def field_2d():
    t = np.linspace(0.0, 1.0, 21)
    x = np.linspace(-1.0, 1.0, 33)
    T, X = np.meshgrid(t, x, indexing="ij")
    return GridField(np.sin(X) * np.exp(-T), (t, x), "u", ("t", "x"))
