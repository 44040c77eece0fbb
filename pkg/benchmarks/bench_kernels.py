"""Time the compiled kernels against the pure-Python fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``. Prints one line
per kernel with the best-of-N time of each backend and the speed-up.
"""
import argparse
import timeit

import numpy as np

from eqsearch import _kernels_py, kernels, solver
from eqsearch.benchmarks import generate_burgers
from eqsearch.model import Equation, SystemChromosome, Term, Token
from eqsearch.preprocess import build_cache

try:
    from eqsearch import _kernels as compiled
except ImportError:
    compiled = None


def d(order_t, order_x):
    return Token("derivative", (0, (order_t, order_x)), (1.0,))


def burgers_case():
    field = generate_burgers(nu=0.1, nt=41)
    caches = build_cache(field, 2)
    terms = (Term((d(1, 0),)), Term((d(0, 2),)), Term((d(0, 0), d(0, 1))))
    eq = Equation(terms, 0, 1e-6, 0, np.array([-1.0, 0.1, -1.0]), 0.0,
                  np.ones(3, dtype=bool))
    return SystemChromosome((eq,)), [field], caches


def cases(rng):
    data = rng.standard_normal((200, 256))
    weights = rng.standard_normal((256, 9))
    starts = np.clip(np.arange(256) - 4, 0, 247).astype(np.intp)
    X = rng.standard_normal((5000, 8))
    gram, corr = X.T @ X / 5000, X.T @ rng.standard_normal(5000) / 5000
    objs = rng.random((200, 4))
    system, fields, caches = burgers_case()

    def integrate(impl):
        def call():
            saved = kernels.integrate_program
            kernels.integrate_program = impl.integrate_program
            try:
                solver.solution_fitness(system, fields, caches)
            finally:
                kernels.integrate_program = saved
        return call

    return {
        "windowed_apply (200x256, window 9)":
            lambda impl: (lambda: impl.windowed_apply(data, weights, starts)),
        "lasso_cd (8 features)": lambda impl: (lambda: impl.lasso_cd(gram, corr, 1e-3)),
        "nondominated_levels (200 x 4)": lambda impl: (lambda: impl.nondominated_levels(objs)),
        "integrate_program (Burgers, 41 x 256)": integrate,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if compiled is None:
        print("compiled kernels are not built; only the Python backend is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speed-up':>9s}")
    for name, make in cases(rng).items():
        t_py = min(timeit.repeat(make(_kernels_py), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{name:42s} {1e3 * t_py:12.2f} {'-':>14s} {'-':>9s}")
            continue
        t_c = min(timeit.repeat(make(compiled), number=1, repeat=args.repeat))
        print(f"{name:42s} {1e3 * t_py:12.2f} {1e3 * t_c:14.2f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
