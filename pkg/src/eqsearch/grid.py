"""Gridded fields and their on-disk formats."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_AXIS_NAMES = ("t", "x", "y", "z")


@dataclass(frozen=True, eq=False)
class GridField:
    """Sampled values of one variable on a rectilinear grid.

    Parameters
    ----------
    values : ndarray
        Array with one dimension per axis, axis 0 slowest.
    axes : sequence of 1-D arrays
        Strictly increasing coordinates of every axis.
    var_name : str
        Label of the observed variable.
    axis_names : sequence of str, optional
        Labels of the axes, defaults to ``t, x, y, z``.
    """

    values: np.ndarray
    axes: tuple
    var_name: str = "u"
    axis_names: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        axes = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.axes)
        if values.ndim != len(axes):
            raise ValueError(f"values have {values.ndim} dims but {len(axes)} axes given")
        if values.shape != tuple(len(a) for a in axes):
            raise ValueError(f"shape {values.shape} does not match axes lengths "
                             f"{tuple(len(a) for a in axes)}")
        for i, a in enumerate(axes):
            if len(a) > 1 and not np.all(np.diff(a) > 0):
                raise ValueError(f"axis {i} is not strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"field {self.var_name!r} contains non-finite values")
        names = tuple(self.axis_names) or DEFAULT_AXIS_NAMES[:len(axes)]
        if len(names) != len(axes):
            raise ValueError("axis_names length does not match the number of axes")
        values.setflags(write=False)
        for a in axes:
            a.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "axis_names", names)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def with_values(self, values, var_name=None) -> "GridField":
        return GridField(values, self.axes, var_name or self.var_name, self.axis_names)

    def mesh(self):
        """Coordinate arrays broadcast to the full grid shape."""
        return np.meshgrid(*self.axes, indexing="ij")


def same_grid(a: GridField, b: GridField) -> bool:
    return a.shape == b.shape and all(np.array_equal(x, y) for x, y in zip(a.axes, b.axes))


def write_dataset(directory, fields: Sequence[GridField], header_name="dataset.json",
                  extra_blobs: dict | None = None) -> Path:
    """Write fields as a JSON header plus one little-endian f64 blob per variable."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not fields:
        raise ValueError("no fields to write")
    ref = fields[0]
    for f in fields[1:]:
        if not same_grid(ref, f):
            raise ValueError("all fields of a dataset must share one grid")
    blobs = {f.var_name: f.values for f in fields}
    if extra_blobs:
        blobs.update(extra_blobs)
    header = {
        "vars": list(blobs),
        "axes": [a.tolist() for a in ref.axes],
        "axis_names": list(ref.axis_names),
        "dtype": "f64",
        "order": "row-major",
    }
    for name, values in blobs.items():
        np.ascontiguousarray(values, dtype="<f8").tofile(directory / f"{name}.f64")
    path = directory / header_name
    path.write_text(json.dumps(header, indent=1))
    return path


def read_dataset(directory, header_name="dataset.json") -> list[GridField]:
    directory = Path(directory)
    header = json.loads((directory / header_name).read_text())
    if header.get("dtype", "f64") != "f64" or header.get("order", "row-major") != "row-major":
        raise ValueError("only row-major f64 datasets are supported")
    axes = [np.asarray(a, dtype=np.float64) for a in header["axes"]]
    shape = tuple(len(a) for a in axes)
    names = tuple(header.get("axis_names") or DEFAULT_AXIS_NAMES[:len(axes)])
    out = []
    for var in header["vars"]:
        raw = np.fromfile(directory / f"{var}.f64", dtype="<f8")
        if raw.size != int(np.prod(shape)):
            raise ValueError(f"blob for {var!r} has {raw.size} values, expected {np.prod(shape)}")
        out.append(GridField(raw.reshape(shape), axes, var, names))
    return out


def write_csv(path, fields: Sequence[GridField]) -> Path:
    """One row per node: coordinates first, then the value of every field."""
    path = Path(path)
    ref = fields[0]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ref.axis_names) + [f.var_name for f in fields])
        columns = [f.values.ravel() for f in fields]
        for k, coords in enumerate(itertools.product(*ref.axes)):
            writer.writerow([repr(float(c)) for c in coords] + [repr(float(c[k])) for c in columns])
    return path


def read_csv(path, n_axes: int) -> list[GridField]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if rows.size == 0:
        raise ValueError("empty CSV dataset")
    axes = [np.unique(rows[:, i]) for i in range(n_axes)]
    shape = tuple(len(a) for a in axes)
    idx = tuple(np.searchsorted(axes[i], rows[:, i]) for i in range(n_axes))
    out = []
    for j, name in enumerate(header[n_axes:]):
        values = np.full(shape, np.nan)
        values[idx] = rows[:, n_axes + j]
        out.append(GridField(values, axes, name, tuple(header[:n_axes])))
    return out
