"""JSON experiment configuration and the objects built from it."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .. import benchmarks
from ..errors import ConfigError
from ..evaluation import FITNESS_MODES
from ..grid import read_dataset
from ..model import (CoordinateFamily, DerivativeFamily, GridPolyFamily, InverseFamily,
                     TokenPool, TrigFamily, VarPolyFamily)
from ..moeadd import MoeaddConfig
from ..preprocess import PreprocessSpec

BUILTIN = ("burgers", "kdv", "van_der_pol", "lotka_volterra")
SELECTION_MODES = ("min_q", "validation")

GENERATORS = {
    "burgers": lambda p: [benchmarks.generate_burgers(**p)],
    "kdv": lambda p: [benchmarks.generate_kdv_two_soliton(**p)],
    "van_der_pol": lambda p: list(benchmarks.van_der_pol(**p)),
    "lotka_volterra": lambda p: list(benchmarks.generate_lotka_volterra(**p)),
}


@dataclass
class DatasetSpec:
    """Either a built-in benchmark generator with parameters or a dataset directory."""

    benchmark: str | None = None
    params: dict = field(default_factory=dict)
    path: str | None = None
    variables: list | None = None

    def validate(self):
        if (self.benchmark is None) == (self.path is None):
            raise ConfigError("dataset needs exactly one of 'benchmark' or 'path'")
        if self.benchmark is not None and self.benchmark not in GENERATORS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; "
                              f"choose from {sorted(GENERATORS)}")

    def load(self, base_dir: Path | None = None) -> list:
        if self.benchmark is not None:
            params = {k: tuple(v) if isinstance(v, list) else v for k, v in self.params.items()}
            fields = GENERATORS[self.benchmark](params)
        else:
            path = Path(self.path)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            fields = read_dataset(path)
        if self.variables:
            by_name = {f.var_name: f for f in fields}
            missing = [v for v in self.variables if v not in by_name]
            if missing:
                raise ConfigError(f"dataset has no variables {missing}")
            fields = [by_name[v] for v in self.variables]
        return fields


@dataclass
class ExperimentConfig:
    """One benchmark sweep: data, search space, optimizer settings and ground truth.

    ``ground_truth`` holds one rendered equation per variable in
    ``target = c_1 * T_1 + ...`` form using the pool's token rendering, e.g.
    ``"d^1u/dt^1 = 0.1 * d^2u/dx^2 - 1.0 * u * d^1u/dx^1"``, or in
    ``target + a_1 * T_1 + ... = 0`` form, in which case coefficients are
    reported as the ``a_i``.
    """

    name: str
    dataset: DatasetSpec
    token_families: list
    moeadd: dict = field(default_factory=dict)
    noise_levels: list = field(default_factory=lambda: [0.0])
    runs: int = 10
    seed: int = 0
    preprocess: dict = field(default_factory=dict)
    max_derivative_order: int | None = None
    fitness_mode: str = "discrepancy"
    boundary_fraction: float = 0.1
    selection: str = "min_q"
    validation_fraction: float = 0.2
    ground_truth: list = field(default_factory=list)
    coeff_tol: float = 0.05
    output_dir: str = "results"

    def __post_init__(self):
        if isinstance(self.dataset, dict):
            self.dataset = DatasetSpec(**self.dataset)
        self.validate()

    def validate(self):
        self.dataset.validate()
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if any(float(n) < 0 for n in self.noise_levels):
            raise ConfigError("noise levels must be non-negative")
        if self.fitness_mode not in FITNESS_MODES:
            raise ConfigError(f"fitness_mode must be one of {FITNESS_MODES}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(f"selection must be one of {SELECTION_MODES}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if not any(f.get("family") == "derivative" for f in self.token_families):
            raise ConfigError("token_families must include the derivative family")
        try:
            self.moeadd_config()
            self.preprocess_spec()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- builders ------------------------------------------------------------

    def moeadd_config(self, seed: int = 0) -> MoeaddConfig:
        opts = dict(self.moeadd)
        if "sparsity_interval" in opts:
            opts["sparsity_interval"] = tuple(opts["sparsity_interval"])
        opts["seed"] = seed
        return MoeaddConfig(**opts)

    def preprocess_spec(self) -> PreprocessSpec:
        return PreprocessSpec(**self.preprocess)

    def cache_order(self) -> int:
        if self.max_derivative_order is not None:
            return int(self.max_derivative_order)
        deriv = next(f for f in self.token_families if f["family"] == "derivative")
        return max(int(m) for m in deriv["max_orders"])

    def build_pool(self, fields) -> TokenPool:
        variables = [f.var_name for f in fields]
        axis_names = list(fields[0].axis_names) or [f"x{i + 1}" for i in range(fields[0].ndim)]
        return build_pool(self.token_families, variables, axis_names)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        obj = copy.deepcopy(obj)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_pool(specs, variables, axis_names) -> TokenPool:
    """Token pool from a list of family descriptions (see the built-in configs)."""
    families = []
    for spec in specs:
        spec = dict(spec)
        name = spec.pop("family", None)
        prob = float(spec.pop("probability", 1.0))
        indep = spec.pop("autonomous", None)
        try:
            if name == "derivative":
                fam = DerivativeFamily(variables, axis_names, spec.pop("max_orders"),
                                       probability=prob, **spec)
            elif name == "coordinate":
                fam = CoordinateFamily(axis_names, probability=prob, **spec)
            elif name == "inverse":
                fam = InverseFamily(axis_names, probability=prob, **spec)
            elif name == "grid_poly":
                fam = GridPolyFamily(axis_names, probability=prob, **spec)
            elif name == "var_poly":
                fam = VarPolyFamily(variables, probability=prob, **spec)
            elif name == "trig":
                fam = TrigFamily(axis_names, probability=prob, **spec)
            elif name == "velocity":
                raise ConfigError("the velocity family takes measured arrays; "
                                  "build it through the Python API")
            else:
                raise ConfigError(f"unknown token family {name!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad token family spec {name!r}: {exc}") from exc
        if indep is not None and name != "derivative":
            fam.is_independent = bool(indep)
        families.append(fam)
    try:
        return TokenPool(families)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def builtin_config_path(name: str) -> Path:
    return Path(str(resources.files("eqsearch.configs").joinpath(f"{name}.json")))


def load_config(source) -> ExperimentConfig:
    """Load a config from a JSON path or the name of a built-in benchmark config."""
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, dict):
        return ExperimentConfig.from_dict(source)
    path = Path(source)
    if not path.exists() and str(source) in BUILTIN:
        path = builtin_config_path(str(source))
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(obj)


def stream_seed(master: int, run: int, level: int, stream: int) -> int:
    """Independent 63-bit seed for one (run, noise level, purpose) triple.

    Streams: 0 = noise, 1 = evolution. Seeds depend only on their own indices,
    so adding runs or levels never changes existing ones.
    """
    ss = np.random.SeedSequence([int(master), int(run), int(level), int(stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
