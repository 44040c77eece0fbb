"""Benchmark datasets and the multiplicative Gaussian noise model.

Four reference systems are produced here: Burgers' equation (method of lines),
the two-soliton Korteweg-de Vries solution (closed form), the Van der Pol
oscillator and the Lotka-Volterra system (classical RK4).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CalibrationError, IntegrationError, UndefinedMetricError
from .grid import GridField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    target_nl_percent: float
    seed: int = 0

    def __post_init__(self):
        if not self.target_nl_percent >= 0:
            raise ValueError("target noise level must be non-negative")
        if int(self.seed) < 0:
            raise ValueError("seed must be unsigned")


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(rhs, y0, t0, dt, n_steps, substeps=1, check=None):
    """Return the (n_steps + 1, dim) trajectory sampled every ``dt``."""
    y = np.array(y0, dtype=np.float64, ndmin=1)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    h = dt / substeps
    t = t0
    for n in range(1, n_steps + 1):
        for s in range(substeps):
            y = rk4_step(rhs, t, y, h)
            t = t0 + ((n - 1) * substeps + s + 1) * h
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at step {n}", step=n)
        if check is not None:
            check(n, y)
        out[n] = y
    return out


def solve_ode_rk4(rhs: Callable, y0, t0: float, dt: float, n_steps: int,
                  names: Sequence[str] | None = None, substeps: int = 1) -> list[GridField]:
    """Integrate ``y' = rhs(t, y)`` with the classical four-stage Runge-Kutta scheme.

    Returns one :class:`GridField` per state component on the time grid
    ``t0 + dt * arange(n_steps + 1)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    traj = integrate_rk4(rhs, y0, t0, dt, n_steps, substeps)
    t = t0 + dt * np.arange(n_steps + 1)
    if names is None:
        names = ["u", "v", "w"][:traj.shape[1]] if traj.shape[1] <= 3 else \
            [f"u{i}" for i in range(traj.shape[1])]
    return [GridField(traj[:, i], (t,), names[i], ("t",)) for i in range(traj.shape[1])]


def van_der_pol(eps=0.2, y0=(np.sqrt(3) / 2, 0.5), dt=0.05, n_points=320, substeps=1):
    """Van der Pol oscillator ``u'' + eps (u^2 - 1) u' + u = 0`` as (u, v = u')."""
    def rhs(t, y):
        u, v = y
        return np.array([v, -eps * (u * u - 1.0) * v - u])
    return solve_ode_rk4(rhs, y0, 0.0, dt, n_points - 1, ("u", "v"), substeps)


def generate_lotka_volterra(alpha, beta, gamma, delta, u0, v0, dt, n_steps, substeps=1):
    """Prey ``u`` and predator ``v``: u' = alpha u - beta u v, v' = delta u v - gamma v."""
    params = (alpha, beta, gamma, delta, u0, v0)
    if min(params) <= 0:
        raise ValueError("all Lotka-Volterra parameters and initial populations must be positive")

    def rhs(t, y):
        u, v = y
        return np.array([alpha * u - beta * u * v, delta * u * v - gamma * v])

    def check(n, y):
        if np.any(y <= 0):
            raise IntegrationError(f"negative population at step {n}; reduce the step size",
                                   step=n)

    traj = integrate_rk4(rhs, (u0, v0), 0.0, dt, n_steps, substeps, check)
    t = dt * np.arange(n_steps + 1)
    return (GridField(traj[:, 0], (t,), "u", ("t",)),
            GridField(traj[:, 1], (t,), "v", ("t",)))


def lotka_volterra_invariant(u, v, alpha, beta, gamma, delta):
    return delta * u - gamma * np.log(u) + beta * v - alpha * np.log(v)


def _periodic_d1(f, dx):
    return (8.0 * (np.roll(f, -1) - np.roll(f, 1)) - (np.roll(f, -2) - np.roll(f, 2))) / (12.0 * dx)


def _periodic_d2(f, dx):
    return (-(np.roll(f, -2) + np.roll(f, 2)) + 16.0 * (np.roll(f, -1) + np.roll(f, 1))
            - 30.0 * f) / (12.0 * dx * dx)


def generate_burgers(nu=0.1, nx=256, nt=101, dx=0.0625, dt=0.1,
                     initial_profile: Callable | None = None, x0=-8.0, t0=0.0) -> GridField:
    """Periodic Burgers' equation ``u_t + u u_x = nu u_xx`` by the method of lines.

    The advective term is discretised in flux form with fourth-order central
    differences so that the discrete integral of ``u`` is conserved. RK4 is
    sub-stepped to satisfy ``h <= dx^2 / (2 nu)`` and an advective CFL limit.
    """
    if nu < 0:
        raise ValueError("viscosity must be non-negative")
    x = x0 + dx * np.arange(nx)
    t = t0 + dt * np.arange(nt)
    if initial_profile is None:
        initial_profile = lambda xx: np.exp(-(xx + 2.0) ** 2)  # noqa: E731
    u = np.asarray(initial_profile(x), dtype=np.float64)

    def rhs(_, f):
        return -_periodic_d1(0.5 * f * f, dx) + nu * _periodic_d2(f, dx)

    umax = float(np.max(np.abs(u)))
    limits = [dt]
    if nu > 0:
        limits.append(dx * dx / (2.0 * nu))
    if umax > 0:
        limits.append(0.5 * dx / umax)
    substeps = int(np.ceil(dt / min(limits) - 1e-12))
    out = np.empty((nt, nx))
    out[0] = u
    h = dt / substeps
    for n in range(1, nt):
        for s in range(substeps):
            u = rk4_step(rhs, 0.0, u, h)
        if not np.all(np.isfinite(u)):
            raise IntegrationError(f"Burgers integration blew up at step {n}", step=n)
        out[n] = u
    return GridField(out, (t, x), "u", ("t", "x"))


def kdv_soliton_field(t, x, ks, offsets):
    """N-soliton (N <= 2) solution of ``u_t + 6 u u_x + u_xxx = 0`` via Hirota's tau function.

    ``u = 2 (log tau)_xx`` with ``tau = sum_j c_j exp(theta_j)``. The identity
    ``tau tau_xx - tau_x^2 = sum_{i<j} c_i c_j (s_i - s_j)^2 exp(theta_i + theta_j)``
    avoids cancellation; exponents are shifted by their maximum for overflow safety.
    """
    T, X = np.meshgrid(t, x, indexing="ij")
    etas = [k * (X - x0) - k ** 3 * T for k, x0 in zip(ks, offsets)]
    if len(ks) == 1:
        thetas = [np.zeros_like(X), etas[0]]
        slopes = [0.0, ks[0]]
        logc = [0.0, 0.0]
    else:
        k1, k2 = ks
        a12 = ((k1 - k2) / (k1 + k2)) ** 2
        thetas = [np.zeros_like(X), etas[0], etas[1], etas[0] + etas[1]]
        slopes = [0.0, k1, k2, k1 + k2]
        logc = [0.0, 0.0, 0.0, np.log(a12)]
    thetas = [th + lc for th, lc in zip(thetas, logc)]
    shift = np.max(np.stack(thetas), axis=0)
    e = [np.exp(th - shift) for th in thetas]
    tau = sum(e)
    num = np.zeros_like(X)
    for i in range(len(e)):
        for j in range(i + 1, len(e)):
            num += (slopes[i] - slopes[j]) ** 2 * e[i] * e[j]
    return 2.0 * num / (tau * tau)


def generate_kdv_two_soliton(k1=1.0, k2=0.6, nt=201, nx=512, dt=0.1, dx=60.0 / 512,
                             x_start=-30.0, t0=0.0, offsets=(-20.0, -12.0)) -> GridField:
    """Sample the exact two-soliton KdV solution; ``k2=None`` gives a single soliton.

    Soliton ``j`` has amplitude ``k_j^2 / 2`` and travels at speed ``k_j^2``
    from its initial centre ``offsets[j]``.
    """
    t = t0 + dt * np.arange(nt)
    x = x_start + dx * np.arange(nx)
    if k2 is None or k2 == 0:
        if not k1 > 0:
            raise ValueError("wavenumber must be positive")
        values = kdv_soliton_field(t, x, (k1,), offsets[:1])
    else:
        if not (k1 > 0 and k2 > 0) or k1 == k2:
            raise ValueError("wavenumbers must be positive and distinct")
        values = kdv_soliton_field(t, x, (k1, k2), offsets)
    return GridField(values, (t, x), "u", ("t", "x"))


def measure_noise_level(clean: GridField | np.ndarray, noisy: GridField | np.ndarray) -> float:
    """Noise level in percent: ``100 ||u - u_noisy||_2 / ||u||_2`` over all nodes."""
    u = clean.values if isinstance(clean, GridField) else np.asarray(clean, dtype=float)
    w = noisy.values if isinstance(noisy, GridField) else np.asarray(noisy, dtype=float)
    if u.shape != w.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {w.shape}")
    ref = np.linalg.norm(u.ravel())
    if ref == 0:
        raise UndefinedMetricError("noise level undefined for an all-zero clean field")
    return float(100.0 * np.linalg.norm((u - w).ravel()) / ref)


def add_noise(field: GridField, spec: NoiseSpec, iterations: int = 20,
              bracket=(0.0, 10.0)) -> GridField:
    """Add ``N(0, (k |u|)^2)`` noise with ``k`` bisected to hit the target level."""
    if spec.target_nl_percent == 0:
        return field
    u = field.values
    if not np.any(u):
        raise CalibrationError("cannot calibrate multiplicative noise on an all-zero field")
    z = np.random.default_rng(spec.seed).standard_normal(u.shape)
    scaled = np.abs(u) * z
    lo, hi = bracket
    if measure_noise_level(u, u + hi * scaled) < spec.target_nl_percent:
        raise CalibrationError(f"target noise level {spec.target_nl_percent}% not reachable "
                               f"with k <= {hi}")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if measure_noise_level(u, u + mid * scaled) < spec.target_nl_percent:
            lo = mid
        else:
            hi = mid
    k = 0.5 * (lo + hi)
    log.debug("noise calibrated: k=%.6g for target %.3g%%", k, spec.target_nl_percent)
    return field.with_values(u + k * scaled)
