import json

import numpy as np
import pytest

from eqsearch.errors import UnevaluableTokenError
from eqsearch.grid import GridField
from eqsearch.model import (CoordinateFamily, DataContext, DerivativeFamily, Equation,
                            GridPolyFamily, InverseFamily, SystemChromosome, Term, Token,
                            TokenPool, TrigFamily, VarPolyFamily, complexity, dominates,
                            evaluate_term, random_equation, random_system, random_term,
                            shape_in, structural_equal, term_in)
from eqsearch.preprocess import build_cache

from conftest import coord, d, fitted, pool_1d, pool_2d, term


# -- tokens and families ------------------------------------------------------------


def test_token_complexity_and_equality():
    assert d(0, 0).complexity == 0.5
    assert d(0, 1, 0).complexity == 1.0
    assert d(0, 0, 3).complexity == 3.0
    assert coord(0).complexity == 0.5
    a = Token("trig", ("sin", 0), (1.0,))
    assert a.equals(Token("trig", ("sin", 0), (1.0 + 1e-12,)))
    assert not a.equals(Token("trig", ("sin", 0), (1.01,)))
    assert a.same_factor(Token("trig", ("sin", 0), (1.5,)))
    assert Token.from_json(json.loads(json.dumps(a.to_json()))) == a


def test_derivative_family_members_and_rendering():
    fam = DerivativeFamily(("u",), ("t", "x"), (1, 3))
    keys = fam.members()
    assert (0, (0, 0)) in keys and (0, (0, 3)) in keys and (0, (1, 0)) in keys
    assert len(keys) == 5 and fam.max_total_order == 3
    assert fam.render(d(0, 0, 3)) == "d^3u/dx^3"
    assert fam.render(d(0, 1, 0)) == "d^1u/dt^1"
    assert fam.render(d(0, 0, 0, power=2)) == "u^2"
    assert fam.render(d(0, 0, 1, power=2)) == "(d^1u/dx^1)^2"
    mixed = DerivativeFamily(("u",), ("t", "x"), (2, 2), mixed=True)
    assert (0, (1, 1)) in mixed.members()
    with pytest.raises(ValueError):
        DerivativeFamily(("u",), ("t", "x"), (1,))


def test_cross_derivative_restriction():
    fam = DerivativeFamily(("u", "v"), ("t",), (1,), cross_derivatives=False)
    allowed = fam.members_for(0)
    assert (0, (1,)) in allowed and (1, (0,)) in allowed and (1, (1,)) not in allowed
    pool = TokenPool([fam])
    assert pool.allows(d(1, 0), 0) and not pool.allows(d(1, 1), 0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        tok = pool.sample_token(rng, variable=0)
        assert pool.allows(tok, 0)
    assert TokenPool([DerivativeFamily(("u", "v"), ("t",), (1,))]).allows(d(1, 1), 0)


def test_parameter_families_and_perturbation_clamps(rng):
    trig = TrigFamily(("t", "x"), freq_range=(0.5, 2.0))
    tok = trig.make(("sin", 1), rng)
    assert 0.5 <= tok.params[0] <= 2.0
    for _ in range(500):
        tok = trig.perturb(tok, rng)
        assert 0.5 <= tok.params[0] <= 2.0
    cf = CoordinateFamily(("t",), max_power=3)
    tok = cf.make((0,), rng)
    for _ in range(200):
        tok = cf.perturb(tok, rng)
        assert tok.params[0] in (1.0, 2.0, 3.0)
    gp = GridPolyFamily(("t",), max_degree=2)
    assert len(gp.make((0, 2), rng).params) == 3
    vp = VarPolyFamily(("u",), max_degree=1)
    assert vp.members() == [(0, 1)]


def test_pool_requires_derivative_family():
    with pytest.raises(ValueError):
        TokenPool([CoordinateFamily(("t",))])
    pool = pool_1d()
    with pytest.raises(UnevaluableTokenError):
        pool.family("nope")
    assert pool.variables == ("u",) and pool.axis_names == ("t",)


# -- terms ------------------------------------------------------------------------------


def test_term_canonical_order_and_duplicates():
    a = term(coord(0), d(0, 1))
    b = term(d(0, 1), coord(0))
    assert a == b and a.equals(b)
    assert a.factors[0].family == "derivative"
    with pytest.raises(ValueError):
        term(d(0, 1), d(0, 1, power=2))
    with pytest.raises(ValueError):
        Term(())
    assert a.has_derivative_of(0) and not term(d(0, 0)).has_derivative_of(0)
    assert shape_in(term(Token("trig", ("sin", 0), (0.5,)), d(0, 0)),
                    [term(Token("trig", ("sin", 0), (0.57,)), d(0, 0))])
    assert Term.from_json(a.to_json()) == a


# -- complexity ---------------------------------------------------------------------------


def test_complexity_examples():
    eq = fitted([term(d(0, 1, 0))], 0, [-1.0], bias=0.3)
    assert complexity(eq) == 1.0
    burgers = fitted([term(d(0, 1, 0)), term(d(0, 0, 0), d(0, 0, 1)), term(d(0, 0, 2))], 0,
                     [-1.0, -1.0, 0.1])
    assert complexity(burgers) == 4.5
    kdv = fitted([term(d(0, 1, 0)), term(d(0, 0, 0), d(0, 0, 1)), term(d(0, 0, 3))], 0,
                 [-1.0, -6.0, -1.0])
    assert complexity(kdv) == 5.5
    # inactive terms do not count
    kdv.active = np.array([True, True, False])
    assert complexity(kdv) == 2.5


# -- dominance and structural equality -------------------------------------------------


def test_dominates_examples():
    assert not dominates((1, 2), (1, 2))
    assert dominates((1, 2), (2, 2))
    assert not dominates((1, 3), (2, 2)) and not dominates((2, 2), (1, 3))
    with pytest.raises(ValueError):
        dominates((1, 2), (1, 2, 3))


def test_structural_equal_examples():
    t1, t2, t3 = term(d(0, 1)), term(d(0, 0)), term(d(0, 2))
    a = Equation((t1, t2, t3), 0, 0.1)
    assert structural_equal(a, Equation((t3, t1, t2), 1, 0.1))
    assert structural_equal(a, Equation((t1, t2, t3), 0, 0.7))
    s1 = term(Token("trig", ("sin", 0), (1.0,)), d(0, 1))
    s2 = term(Token("trig", ("sin", 0), (1.1,)), d(0, 1))
    assert not structural_equal(Equation((s1, t2), 0, 0.1), Equation((s2, t2), 0, 0.1))
    assert term_in(t3, [t1, t3]) and not term_in(t3, [t1])
    sa = SystemChromosome((a,))
    assert structural_equal(sa, SystemChromosome((Equation((t3, t1, t2), 1, 0.1),)))


# -- random generation ----------------------------------------------------------------------


def test_tiny_pool_yields_the_unique_equation(rng):
    pool = pool_1d(max_order=1)
    for _ in range(20):
        eq = random_equation(pool, 0, 2, 1, rng)
        assert sorted(t.factors[0].key[1][0] for t in eq.terms) == [0, 1]
        assert eq.target.has_derivative_of(0)


def test_random_equations_have_no_duplicates_and_an_anchor(rng):
    pool = TokenPool([DerivativeFamily(("u",), ("t", "x"), (1, 3)),
                      CoordinateFamily(("t", "x"))])
    for _ in range(1000):
        eq = random_equation(pool, 0, 5, 2, rng)
        eq.check_invariants(max_factors=2)
        for i, a in enumerate(eq.terms):
            assert not any(a.equals(b) for b in eq.terms[i + 1:])
            assert any(pool.is_independent(f) for f in a.factors)
        assert 1e-9 <= eq.sparsity <= 1.0


def test_random_system_and_random_term(rng):
    pool = pool_1d(("u", "v"), max_order=1, cross=False)
    sys = random_system(pool, 3, 2, rng)
    assert [eq.variable for eq in sys.equations] == [0, 1]
    for v, eq in enumerate(sys.equations):
        assert all(pool.allows(f, v) for t in eq.terms for f in t.factors)
    t = random_term(pool, rng, 2, require_derivative_of=1)
    assert t.has_derivative_of(1)


# -- equations and serialization -------------------------------------------------------------


def test_equation_render_and_json_round_trip():
    pool = pool_2d()
    eq = fitted([term(d(0, 1, 0)), term(d(0, 0, 2)), term(d(0, 0, 0), d(0, 0, 1))], 0,
                [-1.0, 0.1, -1.0], bias=0.0)
    text = eq.render(pool)
    assert text == "1.0 * d^1u/dt^1 + 1.0 * u * d^1u/dx^1 - 0.1 * d^2u/dx^2 = 0"
    back = Equation.from_json(json.loads(json.dumps(eq.to_json())))
    assert structural_equal(back, eq) and back.render(pool) == text
    sys = SystemChromosome((eq,))
    assert SystemChromosome.from_json(json.loads(sys.dumps())).render(pool) == [text]
    assert eq.rhs_coefficients() == {1: 0.1, 2: -1.0}


def test_equation_validation():
    with pytest.raises(ValueError):
        Equation((term(d(0, 1)),), 1, 0.1)
    with pytest.raises(ValueError):
        Equation((term(d(0, 1)),), 0, 0.0)
    with pytest.raises(ValueError):
        SystemChromosome((Equation((term(d(0, 1)),), 0, 0.1, variable=1),))
    bad = Equation((term(d(0, 0)), term(d(0, 1))), 0, 0.1)
    with pytest.raises(ValueError):
        bad.check_invariants()
    with pytest.raises(ValueError):
        bad.rhs_coefficients()


# -- evaluation --------------------------------------------------------------------------------


def test_term_evaluation(field_2d):
    caches = build_cache(field_2d, 1)
    ctx = DataContext(caches, ["u"])
    pool = pool_2d(coordinate=True)
    u = evaluate_term(term(d(0, 0, 0)), pool, ctx)
    np.testing.assert_array_equal(u, field_2d.values.ravel())
    prod = evaluate_term(term(d(0, 0, 0), d(0, 0, 1)), pool, ctx)
    np.testing.assert_allclose(prod, (field_2d.values * caches["u"][(0, 1)].values).ravel())
    tx = evaluate_term(term(d(0, 0, 0), coord(1)), pool, ctx)
    np.testing.assert_allclose(tx, (field_2d.values * field_2d.mesh()[1]).ravel())
    with pytest.raises(UnevaluableTokenError):
        evaluate_term(term(d(0, 0, 3)), pool, ctx)


def test_inverse_token_rejects_zero_coordinate():
    x = np.linspace(0, 1, 11)
    f = GridField(x, (x,), "u", ("x",))
    ctx = DataContext(build_cache(f, 1), ["u"])
    pool = TokenPool([DerivativeFamily(("u",), ("x",), (1,)), InverseFamily(("x",))])
    with pytest.raises(UnevaluableTokenError):
        evaluate_term(term(d(0, 1), Token("inverse", (0,), ())), pool, ctx)


def test_empty_grid_is_rejected():
    class Empty:
        n_nodes = 0
    with pytest.raises(ValueError):
        evaluate_term(term(d(0, 0)), pool_1d(), Empty())
