"""Solution-based quality: integrate a candidate equation and compare with the data.

Every equation of a system must be explicitly isolable for the highest time
derivative of its variable. The isolated right-hand sides are expanded into a
flat list of monomials (state factors times separable functions of ``t`` and
``x``) and integrated with RK4; spatial derivatives use fourth-order central
stencils and a three-node band at each spatial edge follows the data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NotSolvableError
from .model import SystemChromosome

log = logging.getLogger(__name__)

PENALTY = 1e9
BLOWUP_FACTOR = 1e6
MAX_MONOMIALS = 256
BAND = 3
# spectral radius of the 4th-order central stencils for derivative orders 0..3
STENCIL_RADIUS = (1.0, 1.3722219796173214, 16.0 / 3.0, 4.608742208219353)
RK4_STABILITY = 2.5


@dataclass
class Monomial:
    coef: float
    time_fns: tuple = ()
    space_fns: tuple = ()
    state: dict = field(default_factory=dict)  # (var, comp, sorder) -> power
    top: dict = field(default_factory=dict)  # var -> power of its isolated derivative

    def times(self, other: "Monomial") -> "Monomial":
        state = dict(self.state)
        for k, p in other.state.items():
            state[k] = state.get(k, 0) + p
        top = dict(self.top)
        for k, p in other.top.items():
            top[k] = top.get(k, 0) + p
        return Monomial(self.coef * other.coef, self.time_fns + other.time_fns,
                        self.space_fns + other.space_fns, state, top)


def _axis_fn(token):
    """Function of one coordinate for coordinate-only token families."""
    fam = token.family
    if fam == "coordinate":
        axis, p = token.key[0], int(token.params[0])
        return axis, lambda x: x ** p
    if fam == "inverse":
        return token.key[0], lambda x: 1.0 / x
    if fam == "grid_poly":
        coeffs = np.asarray(token.params)
        return token.key[0], lambda x: np.polynomial.polynomial.polyval(x, coeffs)
    if fam == "trig":
        fn = np.sin if token.key[0] == "sin" else np.cos
        freq = token.params[0]
        return token.key[1], lambda x: fn(freq * x)
    raise NotSolvableError(f"token family {fam!r} is not supported by the solver")


def _token_monomials(token, orders):
    if token.family == "derivative":
        var, multi = token.key
        power = int(token.params[0]) if token.params else 1
        j, spatial = multi[0], multi[1:]
        if sum(1 for k in spatial if k) > 1:
            raise NotSolvableError("mixed spatial derivatives are not supported")
        sorder = int(sum(spatial))
        if sorder >= len(STENCIL_RADIUS):
            raise NotSolvableError(f"spatial derivative order {sorder} not supported")
        if j < orders[var]:
            return [Monomial(1.0, state={(var, j, sorder): power})]
        if j == orders[var] and sorder == 0:
            return [Monomial(1.0, top={var: power})]
        raise NotSolvableError("time derivative beyond the isolated order")
    if token.family == "var_poly":
        var = token.key[0]
        return [Monomial(float(p), state={(var, 0, 0): j} if j else {})
                for j, p in enumerate(token.params) if p != 0]
    axis, fn = _axis_fn(token)
    if axis == 0:
        return [Monomial(1.0, time_fns=(fn,))]
    return [Monomial(1.0, space_fns=(fn,))]


def _product(polys):
    out = [Monomial(1.0)]
    for poly in polys:
        out = [a.times(b) for a in out for b in poly]
        if len(out) > MAX_MONOMIALS:
            raise NotSolvableError("right-hand side expansion too large")
    return out


def isolate(eq, variable: int):
    """Index and order of the isolable highest-time-derivative term.

    The term must be the lone linear factor ``d^n u / dt^n`` and no other
    active term may contain a time derivative of order ``>= n`` of ``u``.
    """
    if not eq.is_fitted:
        raise NotSolvableError("equation has no fitted coefficients")
    mask = eq.active_mask()
    active = [i for i in range(len(eq.terms)) if mask[i]]
    top = 0
    for i in active:
        for t in eq.terms[i].factors:
            if t.family == "derivative" and t.key[0] == variable:
                top = max(top, t.key[1][0])
    if top == 0:
        raise NotSolvableError("no time derivative of the described variable")
    iso = []
    for i in active:
        factors = eq.terms[i].factors
        t = factors[0]
        if (len(factors) == 1 and t.family == "derivative" and t.key[0] == variable
                and t.key[1][0] == top and sum(t.key[1][1:]) == 0
                and int(t.params[0]) == 1):
            iso.append(i)
    if len(iso) != 1:
        raise NotSolvableError("highest time derivative does not occur as a lone linear term")
    for i in active:
        if i == iso[0]:
            continue
        for t in eq.terms[i].factors:
            if t.family == "derivative" and t.key[0] == variable and t.key[1][0] >= top:
                raise NotSolvableError("highest time derivative occurs non-linearly")
    return iso[0], top


@dataclass
class Program:
    """Flat monomial representation consumed by ``kernels.integrate_program``."""

    orders: list
    mono_coef: np.ndarray
    mono_var: np.ndarray
    mono_time: np.ndarray
    mono_space: np.ndarray
    mono_fstart: np.ndarray
    mono_fcount: np.ndarray
    f_var: np.ndarray
    f_comp: np.ndarray
    f_sorder: np.ndarray
    f_power: np.ndarray
    time_fns: list
    space_fns: list


def compile_system(chromosome: SystemChromosome, ndim: int) -> Program:
    n_vars = len(chromosome)
    isolated = [isolate(eq, v) for v, eq in enumerate(chromosome.equations)]
    orders = [order for _, order in isolated]
    rhs = {}
    for v, (eq, (iso, _)) in enumerate(zip(chromosome.equations, isolated)):
        scale = -1.0 / eq.coefficients[iso]
        monos = [Monomial(eq.bias * scale)] if eq.bias != 0 else []
        mask = eq.active_mask()
        for i, term in enumerate(eq.terms):
            if i == iso or not mask[i] or eq.coefficients[i] == 0:
                continue
            poly = _product([_token_monomials(t, orders) for t in term.factors])
            for m in poly:
                m.coef *= eq.coefficients[i] * scale
            monos.extend(poly)
        rhs[v] = monos
    # substitute isolated derivatives of other variables, in dependency order
    resolved: dict = {}
    visiting = set()

    def resolve(v):
        if v in resolved:
            return resolved[v]
        if v in visiting:
            raise NotSolvableError("cyclic dependency between isolated derivatives")
        visiting.add(v)
        out = []
        for m in rhs[v]:
            if not m.top:
                out.append(m)
                continue
            parts = [[Monomial(m.coef, m.time_fns, m.space_fns, dict(m.state))]]
            for w, p in m.top.items():
                parts.extend([resolve(w)] * p)
            out.extend(_product(parts))
            if len(out) > MAX_MONOMIALS:
                raise NotSolvableError("right-hand side expansion too large")
        visiting.discard(v)
        resolved[v] = out
        return out

    flat = [(v, m) for v in range(n_vars) for m in resolve(v)]
    time_fns, space_fns = [], []
    mono = {k: [] for k in ("coef", "var", "time", "space", "fstart", "fcount")}
    fac = {k: [] for k in ("var", "comp", "sorder", "power")}
    for v, m in flat:
        if ndim == 1 and any(k[2] for k in m.state):
            raise NotSolvableError("spatial derivative in an ODE")
        if ndim == 1 and m.space_fns:
            raise NotSolvableError("spatial coordinate in an ODE")
        mono["coef"].append(m.coef)
        mono["var"].append(v)
        if m.time_fns:
            mono["time"].append(len(time_fns))
            time_fns.append(m.time_fns)
        else:
            mono["time"].append(-1)
        if m.space_fns:
            mono["space"].append(len(space_fns))
            space_fns.append(m.space_fns)
        else:
            mono["space"].append(-1)
        mono["fstart"].append(len(fac["var"]))
        mono["fcount"].append(len(m.state))
        for (w, comp, sorder), p in sorted(m.state.items()):
            fac["var"].append(w)
            fac["comp"].append(comp)
            fac["sorder"].append(sorder)
            fac["power"].append(p)
    ints = lambda xs: np.asarray(xs, dtype=np.intp)  # noqa: E731
    return Program(orders, np.asarray(mono["coef"], dtype=float), ints(mono["var"]),
                   ints(mono["time"]), ints(mono["space"]), ints(mono["fstart"]),
                   ints(mono["fcount"]), ints(fac["var"]), ints(fac["comp"]),
                   ints(fac["sorder"]), ints(fac["power"]), time_fns, space_fns)


def _fn_table(fn_lists, x):
    table = np.ones((max(len(fn_lists), 1), x.size))
    for r, fns in enumerate(fn_lists):
        for fn in fns:
            table[r] *= fn(x)
    return table


def _component(caches, var_name, comp, ndim):
    multi = (comp,) + (0,) * (ndim - 1)
    return caches[var_name][multi].values


def estimate_rate(program: Program, states, t_axis, x_axis, dx) -> float:
    """Rough spectral-radius bound of the right-hand side Jacobian along the data."""
    rate = 0.0
    t_tab = _fn_table(program.time_fns, t_axis) if program.time_fns else None
    s_tab = _fn_table(program.space_fns, x_axis) if program.space_fns else None
    for m in range(program.mono_coef.size):
        base = abs(program.mono_coef[m])
        if program.mono_time[m] >= 0:
            base *= np.max(np.abs(t_tab[program.mono_time[m]]))
        if program.mono_space[m] >= 0:
            base *= np.max(np.abs(s_tab[program.mono_space[m]]))
        start, count = program.mono_fstart[m], program.mono_fcount[m]
        vals = [np.abs(states[(program.f_var[k], program.f_comp[k])]) for k in
                range(start, start + count)]
        for j, k in enumerate(range(start, start + count)):
            p = program.f_power[k]
            deriv = p * np.max(vals[j]) ** (p - 1) if p > 1 else 1.0
            others = 1.0
            for i, v in enumerate(vals):
                if i != j:
                    others *= np.max(v) ** program.f_power[start + i]
            sorder = program.f_sorder[k]
            rate += base * deriv * others * STENCIL_RADIUS[sorder] / (dx ** sorder if sorder else 1.0)
        if count == 0:
            rate += 0.0
    return rate


def solution_fitness(chromosome: SystemChromosome, data, caches, max_steps: int = 50000,
                     return_solution: bool = False):
    """Relative L2 error in percent between the integrated system and the data.

    ``data`` is the list of observed fields (one per variable, shared grid with
    time on axis 0); ``caches`` supplies initial time derivatives and the edge
    band values. Blow-ups and over-stiff systems get :data:`PENALTY`.
    """
    ref = data[0]
    ndim = ref.ndim
    if ndim > 2:
        raise NotSolvableError("solution fitness supports at most one spatial dimension")
    program = compile_system(chromosome, ndim)
    n_vars = len(data)
    names = [f.var_name for f in data]
    t_axis = ref.axes[0]
    nt = t_axis.size
    dt = np.diff(t_axis)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise NotSolvableError("time axis must be uniform")
    dt = float(dt[0])
    if ndim == 2:
        x_axis = ref.axes[1]
        dxs = np.diff(x_axis)
        if not np.allclose(dxs, dxs[0], rtol=1e-6, atol=0):
            raise NotSolvableError("spatial axis must be uniform")
        dx = float(dxs[0])
        nx = x_axis.size
        band = BAND
        if nx < 2 * band + 2:
            raise NotSolvableError("spatial axis too short")
    else:
        x_axis = np.zeros(1)
        dx, nx, band = 1.0, 1, 0
    n_comp = max(program.orders)
    states = {}
    for v, name in enumerate(names):
        for j in range(program.orders[v]):
            states[(v, j)] = _component(caches, name, j, ndim)
    rate = estimate_rate(program, states, t_axis, x_axis, dx)
    substeps = max(1, int(np.ceil(dt * rate / RK4_STABILITY)))
    total = substeps * (nt - 1)
    if total > max_steps:
        log.debug("solver rejected: %d steps needed (> %d)", total, max_steps)
        return ([PENALTY] * n_vars, None) if return_solution else [PENALTY] * n_vars
    h = dt / substeps
    half_times = t_axis[0] + 0.5 * h * np.arange(2 * total + 1)
    time_table = _fn_table(program.time_fns, half_times)
    space_table = _fn_table(program.space_fns, x_axis)
    y0 = np.zeros((n_vars, n_comp, nx))
    for v in range(n_vars):
        for j in range(program.orders[v]):
            y0[v, j] = states[(v, j)][0].reshape(nx)
    if band:
        band_vals = np.zeros((2 * total + 1, n_vars, n_comp, 2 * band))
        pos = (half_times - t_axis[0]) / dt
        lo = np.minimum(np.floor(pos).astype(int), nt - 2)
        frac = (pos - lo)[:, None]
        for v in range(n_vars):
            for j in range(program.orders[v]):
                s = states[(v, j)]
                edge = np.concatenate([s[:, :band], s[:, -band:]], axis=1)
                band_vals[:, v, j] = edge[lo] * (1 - frac) + edge[lo + 1] * frac
    else:
        band_vals = np.zeros((1, n_vars, n_comp, 0))
    limit = BLOWUP_FACTOR * max(float(np.max(np.abs(f.values))) for f in data)
    out, status = kernels.integrate_program(
        y0, np.asarray(program.orders, dtype=np.intp), program.mono_coef, program.mono_var,
        program.mono_time, program.mono_space, program.mono_fstart, program.mono_fcount,
        program.f_var, program.f_comp, program.f_sorder, program.f_power,
        time_table, space_table, band_vals, band, dx, h, nt, substeps, limit)
    if status != 0:
        log.debug("solver blow-up at output step %d", status)
        return ([PENALTY] * n_vars, None) if return_solution else [PENALTY] * n_vars
    quality = []
    for v, f in enumerate(data):
        sol = out[:, v].reshape(f.shape)
        quality.append(float(100.0 * np.linalg.norm(sol - f.values) / np.linalg.norm(f.values)))
    if return_solution:
        return quality, out
    return quality
