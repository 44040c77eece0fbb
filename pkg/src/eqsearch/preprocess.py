"""Noise-robust derivative estimation.

Each node's derivative comes from a least-squares Chebyshev fit on a window
of neighbouring samples along one axis, differentiated analytically. Because
the fit is linear in the data, every node reduces to a fixed weight row that
is applied by :func:`eqsearch.kernels.windowed_apply`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.ndimage import convolve1d

from . import kernels
from .errors import IllConditionedWindowError
from .grid import GridField, read_dataset, write_dataset

MAX_WINDOW_COND = 1e12


@dataclass(frozen=True)
class PreprocessSpec:
    smoothing_sigma: float = 0.0
    window: int = 9
    degree: int = 5

    def __post_init__(self):
        if self.smoothing_sigma < 0:
            raise ValueError("smoothing_sigma must be non-negative")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be an odd node count >= 3")
        if not 0 <= self.degree < self.window:
            raise ValueError("polynomial degree must be smaller than the window")


def smooth_field(field: GridField, sigma: float) -> GridField:
    """Separable truncated-Gaussian smoothing, renormalised near the boundaries."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return field
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()
    values = field.values
    mass = np.ones_like(values)
    for axis in range(values.ndim):
        values = convolve1d(values, kernel, axis=axis, mode="constant", cval=0.0)
        mass = convolve1d(mass, kernel, axis=axis, mode="constant", cval=0.0)
    return field.with_values(values / mass)


@lru_cache(maxsize=64)
def _stencil(coords_bytes: bytes, window: int, degree: int, order: int):
    coords = np.frombuffer(coords_bytes, dtype=np.float64)
    n = coords.size
    if n < window:
        raise ValueError(f"window of {window} nodes does not fit an axis of {n} nodes")
    half = window // 2
    starts = np.clip(np.arange(n) - half, 0, n - window).astype(np.intp)
    basis_der = [C.chebder(np.eye(degree + 1)[k], order) if order else np.eye(degree + 1)[k]
                 for k in range(degree + 1)]
    weights = np.empty((n, window))
    cache = {}
    for i in range(n):
        s = int(starts[i])
        xs = coords[s:s + window]
        centre = 0.5 * (xs[0] + xs[-1])
        halfwidth = 0.5 * (xs[-1] - xs[0])
        xi = (xs - centre) / halfwidth
        pos = i - s
        key = (np.round(xi, 12).tobytes(), pos)
        row = cache.get(key)
        if row is None:
            V = C.chebvander(xi, degree)
            if np.linalg.cond(V) > MAX_WINDOW_COND:
                raise IllConditionedWindowError(f"rank-deficient fit window at node {i}")
            pinv = np.linalg.pinv(V)
            d = np.array([C.chebval(xi[pos], b) for b in basis_der])
            row = d @ pinv
            cache[key] = row
        weights[i] = row / halfwidth ** order
    weights.setflags(write=False)
    starts.setflags(write=False)
    return weights, starts


def chebyshev_stencil(coords, window: int, degree: int, order: int):
    """Per-node weight rows and window starts for the ``order``-th derivative."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    return _stencil(coords.tobytes(), int(window), int(degree), int(order))


def _apply_along(values: np.ndarray, axis: int, weights, starts) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    shape = moved.shape
    flat = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    out = kernels.windowed_apply(flat, weights, starts).reshape(shape)
    return np.moveaxis(out, -1, axis)


def chebyshev_derivative(field: GridField, axis: int, order: int,
                         spec: PreprocessSpec = PreprocessSpec()) -> GridField:
    """Derivative of ``order`` along ``axis`` from local Chebyshev least-squares fits.

    Windows are centred on the node and shifted inwards at the boundaries so
    every fit keeps ``spec.window`` samples.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    if order > spec.degree:
        raise ValueError(f"derivative order {order} exceeds polynomial degree {spec.degree}")
    if order == 0:
        return field
    weights, starts = chebyshev_stencil(field.axes[axis], spec.window, spec.degree, order)
    return field.with_values(_apply_along(field.values, axis, weights, starts))


def multi_indices(ndim: int, max_order: int):
    """All multi-indices with total order <= max_order, sorted by order then lexicographically."""
    idx = [m for m in itertools.product(range(max_order + 1), repeat=ndim) if sum(m) <= max_order]
    return sorted(idx, key=lambda m: (sum(m), tuple(-v for v in m)))


def cache_key_name(multi) -> str:
    """``(1, 1) -> 'd2_x1x2'``, ``(0, 0) -> 'd0'``."""
    n = sum(multi)
    if n == 0:
        return "d0"
    return f"d{n}_" + "".join(f"x{i + 1}" * k for i, k in enumerate(multi))


def parse_key_name(name: str, ndim: int):
    if name == "d0":
        return (0,) * ndim
    counts = [0] * ndim
    for part in name.split("_", 1)[1].split("x")[1:]:
        counts[int(part) - 1] += 1
    return tuple(counts)


@dataclass
class DerivativeCache:
    """All partial derivatives of one variable up to total order ``max_order``."""

    entries: dict = field(default_factory=dict)
    max_order: int = 1

    def __getitem__(self, multi) -> GridField:
        return self.entries[tuple(multi)]

    def __contains__(self, multi) -> bool:
        return tuple(multi) in self.entries

    @property
    def base(self) -> GridField:
        return next(iter(self.entries.values()))

    def save(self, directory) -> Path:
        fields = list(self.entries.values())
        blobs = {cache_key_name(k): v.values for k, v in self.entries.items()}
        path = write_dataset(directory, fields[:1], header_name="cache.json", extra_blobs=blobs)
        return path

    @classmethod
    def load(cls, directory) -> "DerivativeCache":
        fields = read_dataset(directory, header_name="cache.json")
        ndim = fields[0].ndim
        entries = {}
        for f in fields[1:]:
            entries[parse_key_name(f.var_name, ndim)] = f.with_values(f.values, fields[0].var_name)
        max_order = max(sum(k) for k in entries)
        return cls(dict(sorted(entries.items(), key=lambda kv: (sum(kv[0]), kv[0]))), max_order)


def build_cache(fields, max_order: int, spec: PreprocessSpec = PreprocessSpec()):
    """Smooth each field once, then differentiate axis by axis in ascending order.

    Returns a dict mapping variable name to its :class:`DerivativeCache`.
    """
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    if isinstance(fields, GridField):
        fields = [fields]
    caches = {}
    for f in fields:
        smooth = smooth_field(f, spec.smoothing_sigma)
        entries = {}
        partial = {(): smooth}
        for multi in multi_indices(f.ndim, max_order):
            for axis in range(f.ndim):
                prefix = multi[:axis + 1]
                if prefix not in partial:
                    partial[prefix] = chebyshev_derivative(partial[multi[:axis]], axis,
                                                           multi[axis], spec)
            entries[multi] = partial[multi]
        caches[f.var_name] = DerivativeCache(entries, max_order)
    return caches
