import numpy as np
import pytest

from eqsearch.benchmarks import generate_burgers, generate_lotka_volterra, van_der_pol
from eqsearch.errors import NotSolvableError
from eqsearch.model import SystemChromosome
from eqsearch.preprocess import build_cache
from eqsearch.solver import PENALTY, compile_system, isolate, solution_fitness

from conftest import coord, d, fitted, term


@pytest.fixture(scope="module")
def lv():
    fields = list(generate_lotka_volterra(20, 20, 20, 20, 4, 2, 0.002, 500, substeps=10))
    return fields, build_cache(fields, 2)


@pytest.fixture(scope="module")
def vdp():
    (u, _) = van_der_pol()
    return [u], build_cache([u], 2)


def lv_system(a=20.0):
    eq_u = fitted([term(d(0, 1)), term(d(0, 0)), term(d(0, 0), d(1, 0))], 0, [-1.0, a, -a])
    eq_v = fitted([term(d(1, 1)), term(d(1, 0)), term(d(0, 0), d(1, 0))], 0, [-1.0, -a, a],
                  variable=1)
    return SystemChromosome((eq_u, eq_v))


def test_true_lotka_volterra_system_reproduces_data(lv):
    fields, caches = lv
    q = solution_fitness(lv_system(), fields, caches)
    assert len(q) == 2 and all(v < 1.0 for v in q)
    wrong = solution_fitness(lv_system(15.0), fields, caches)
    assert all(v > 10 * max(q) for v in wrong)


def test_zero_right_hand_side_gives_initial_slice_deviation(lv):
    fields, caches = lv
    system = SystemChromosome((fitted([term(d(0, 1))], 0, [-1.0]),
                               fitted([term(d(1, 1))], 0, [-1.0], variable=1)))
    q = solution_fitness(system, fields, caches)
    for qi, f in zip(q, fields):
        expected = 100 * np.linalg.norm(f.values - f.values[0]) / np.linalg.norm(f.values)
        assert qi == pytest.approx(expected, rel=1e-9)


def test_van_der_pol_true_and_wrong_structures(vdp):
    fields, caches = vdp
    true = fitted([term(d(0, 2)), term(d(0, 1)), term(d(0, 0, power=2), d(0, 1)),
                   term(d(0, 0))], 0, [-1.0, 0.2, -0.2, -1.0])
    assert solution_fitness(SystemChromosome((true,)), fields, caches)[0] < 1.0
    wrong = fitted([term(d(0, 2)), term(d(0, 1))], 0, [-1.0, -0.5])
    assert solution_fitness(SystemChromosome((wrong,)), fields, caches)[0] > 50


def test_blowup_is_penalised(vdp):
    fields, caches = vdp
    explosive = fitted([term(d(0, 1)), term(d(0, 0, power=2))], 0, [-1.0, 5.0])
    assert solution_fitness(SystemChromosome((explosive,)), fields, caches) == [PENALTY]


def test_isolation_rules():
    ok = fitted([term(d(0, 1)), term(d(0, 0))], 0, [-1.0, 2.0])
    assert isolate(ok, 0) == (0, 1)
    nonlinear = fitted([term(d(0, 1), d(0, 0)), term(d(0, 0))], 0, [-1.0, 2.0])
    with pytest.raises(NotSolvableError):
        isolate(nonlinear, 0)
    no_time = fitted([term(d(0, 0, 1)), term(d(0, 0, 0))], 0, [-1.0, 2.0])
    with pytest.raises(NotSolvableError):
        isolate(no_time, 0)
    twice = fitted([term(d(0, 1)), term(d(0, 1), coord(0))], 0, [-1.0, 2.0])
    with pytest.raises(NotSolvableError):
        isolate(twice, 0)
    unfitted = ok.unfitted()
    with pytest.raises(NotSolvableError):
        isolate(unfitted, 0)


def test_compile_system_orders():
    prog = compile_system(lv_system(), 1)
    assert prog.orders == [1, 1]
    assert prog.mono_coef.size >= 4


def test_burgers_true_equation_integrates_accurately():
    f = generate_burgers(nu=0.1, nt=41)
    caches = build_cache(f, 2)
    eq = fitted([term(d(0, 1, 0)), term(d(0, 0, 2)), term(d(0, 0, 0), d(0, 0, 1))], 0,
                [-1.0, 0.1, -1.0])
    q = solution_fitness(SystemChromosome((eq,)), [f], caches)[0]
    assert q < 1.0
    worse = fitted([term(d(0, 1, 0)), term(d(0, 0, 2))], 0, [-1.0, 0.1])
    assert solution_fitness(SystemChromosome((worse,)), [f], caches)[0] > 5 * q


def test_step_budget_penalises_stiff_systems():
    f = generate_burgers(nu=0.1, nt=21)
    caches = build_cache(f, 3)
    stiff = fitted([term(d(0, 1, 0)), term(d(0, 0, 2))], 0, [-1.0, 50.0])
    assert solution_fitness(SystemChromosome((stiff,)), [f], caches, max_steps=100) == [PENALTY]
