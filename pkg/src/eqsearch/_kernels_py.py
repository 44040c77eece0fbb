"""Pure-Python/numpy reference implementations of the hot kernels.

Signatures and results match the compiled ``_kernels`` module exactly
(up to floating point summation order).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def windowed_apply(data, weights, starts):
    """``out[m, i] = sum_j weights[i, j] * data[m, starts[i] + j]``."""
    data = np.ascontiguousarray(data, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    width = weights.shape[1]
    windows = sliding_window_view(data, width, axis=1)[:, np.asarray(starts, dtype=np.intp), :]
    return np.einsum("mnw,nw->mn", windows, weights)


def soft_threshold(x, lam):
    if x > lam:
        return x - lam
    if x < -lam:
        return x + lam
    return 0.0


def lasso_cd(gram, corr, lam, max_iter=1000, tol=1e-12):
    """Coordinate descent for ``0.5 b'Gb - c'b + lam |b|_1``.

    ``gram`` is the (weighted) Gram matrix of standardised columns and ``corr``
    their (weighted) correlation with the target.
    """
    gram = np.asarray(gram, dtype=np.float64)
    corr = np.asarray(corr, dtype=np.float64)
    p = corr.shape[0]
    beta = np.zeros(p)
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                beta[j] = 0.0
                continue
            rho = corr[j] - gram[j] @ beta + gjj * beta[j]
            new = soft_threshold(rho, lam) / gjj
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        if max_delta < tol:
            break
    return beta


def nondominated_levels(objectives):
    """Non-domination rank of every row (minimisation), 0 for the Pareto front."""
    F = np.asarray(objectives, dtype=np.float64)
    n = F.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.intp)
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    levels = np.full(n, -1, dtype=np.intp)
    front = np.flatnonzero(count == 0)
    rank = 0
    while front.size:
        levels[front] = rank
        count = count - dom[front].sum(axis=0)
        count[levels >= 0] = -1
        front = np.flatnonzero(count == 0)
        rank += 1
    return levels


_STENCILS = {
    1: (np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0, 2),
    2: (np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0, 2),
    3: (np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0, 3),
}


def _spatial(f, sorder, dx, lo, hi):
    if sorder == 0:
        return f[lo:hi]
    coef, r = _STENCILS[sorder]
    out = np.zeros(hi - lo)
    for k, c in enumerate(coef):
        if c != 0.0:
            out += c * f[lo - r + k:hi - r + k]
    return out / dx ** sorder


def integrate_program(y0, n_comp, mono_coef, mono_var, mono_time, mono_space, mono_fstart,
                      mono_fcount, f_var, f_comp, f_sorder, f_power, time_table, space_table,
                      band, band_width, dx, h, n_out, substeps, limit):
    """RK4 method-of-lines integration of a flat monomial right-hand side.

    ``y0[v, j, x]`` holds the ``j``-th time derivative of variable ``v``; the
    top component of each variable evolves by the sum of its monomials
    ``coef * T[t] * S[x] * prod(d^s y[w, c] / dx^s) ** p``. The ``band_width``
    edge nodes on each side follow ``band`` (tabulated at half steps of the
    RK4 step ``h``).
    Returns ``(out[n_out, V, X], status)`` where ``status`` is 0 on success
    or the first output index at which the state blew up.
    """
    y = np.array(y0, dtype=np.float64)
    V, J, X = y.shape
    b = int(band_width)
    lo, hi = b, X - b
    n_mono = mono_coef.shape[0]
    out = np.zeros((n_out, V, X))
    out[0] = y[:, 0, :]

    def set_band(state, half):
        if b:
            state[:, :, :b] = band[half, :, :, :b]
            state[:, :, X - b:] = band[half, :, :, b:]

    def rhs(state, half):
        d = np.zeros_like(state)
        for v in range(V):
            n = n_comp[v]
            if n > 1:
                d[v, :n - 1, lo:hi] = state[v, 1:n, lo:hi]
        derivs = {}
        for m in range(n_mono):
            val = np.full(hi - lo, mono_coef[m])
            if mono_time[m] >= 0:
                val *= time_table[mono_time[m], half]
            if mono_space[m] >= 0:
                val *= space_table[mono_space[m], lo:hi]
            for k in range(mono_fstart[m], mono_fstart[m] + mono_fcount[m]):
                key = (f_var[k], f_comp[k], f_sorder[k])
                g = derivs.get(key)
                if g is None:
                    g = _spatial(state[key[0], key[1]], key[2], dx, lo, hi)
                    derivs[key] = g
                val *= g ** f_power[k]
            v = mono_var[m]
            d[v, n_comp[v] - 1, lo:hi] += val
        return d

    step = 0
    for o in range(1, n_out):
        for _ in range(substeps):
            half = 2 * step
            set_band(y, half)
            k1 = rhs(y, half)
            s = y + 0.5 * h * k1
            set_band(s, half + 1)
            k2 = rhs(s, half + 1)
            s = y + 0.5 * h * k2
            set_band(s, half + 1)
            k3 = rhs(s, half + 1)
            s = y + h * k3
            set_band(s, half + 2)
            k4 = rhs(s, half + 2)
            y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            set_band(y, half + 2)
            step += 1
        if not np.all(np.isfinite(y)) or np.max(np.abs(y[:, 0, :])) > limit:
            return out, o
        out[o] = y[:, 0, :]
    return out, 0
