"""Evolutionary multi-objective discovery of differential equations from gridded data.

Typical use::

    from eqsearch import load_config, run_experiment
    result = run_experiment(load_config("burgers"), runs=1)
"""
from .evaluation import Problem
from .grid import GridField, read_dataset, write_dataset
from .harness.config import ExperimentConfig, load_config
from .harness.experiment import match_equation, run_experiment
from .harness.report import emit_report
from .kernels import BACKEND
from .moeadd import MoeaddConfig, run
from .preprocess import PreprocessSpec, build_cache

__version__ = "0.1.0"

__all__ = ["BACKEND", "ExperimentConfig", "GridField", "MoeaddConfig", "PreprocessSpec",
           "Problem", "build_cache", "emit_report", "load_config", "match_equation",
           "read_dataset", "run", "run_experiment", "write_dataset", "__version__"]
