"""Command-line interface: ``eqsearch generate|discover|benchmark|report``.

Exit status is 0 whenever a sweep completes, whatever the detection outcome;
2 signals a configuration error and 3 an input/output error. Log verbosity
comes from the ``EQSEARCH_LOG_LEVEL`` environment variable (default WARNING).
"""
from __future__ import annotations

import logging
import os
import sys
from pathlib import Path

import click

from ..errors import ConfigError
from ..grid import write_dataset
from .config import BUILTIN, builtin_config_path, load_config
from .experiment import run_experiment
from .report import FORMATS, emit_report, render_report

EXIT_CONFIG = 2
EXIT_IO = 3
LOG_ENV = "EQSEARCH_LOG_LEVEL"


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    """Map configuration and I/O failures onto the documented exit codes."""
    try:
        return fn()
    except ConfigError as exc:
        _fail(str(exc), EXIT_CONFIG)
    except OSError as exc:
        _fail(str(exc), EXIT_IO)


def _progress(rec):
    status = "error" if rec.error else ("success" if rec.success else "no match")
    click.echo(f"noise {rec.level:g}% run {rec.run}: {status} ({rec.seconds:.1f} s)", err=True)


@click.group()
def main():
    """Evolutionary discovery of differential equations from gridded data."""
    _setup_logging()


@main.command()
@click.argument("benchmark", type=click.Choice(BUILTIN))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Directory receiving dataset.json and the value blobs.")
def generate(benchmark, out_dir):
    """Write a built-in benchmark dataset with its configured parameters."""
    def work():
        cfg = load_config(builtin_config_path(benchmark))
        fields = cfg.dataset.load()
        path = write_dataset(out_dir, fields)
        click.echo(str(path))
    _guard(work)


@main.command()
@click.option("--config", "config_path", required=True, help="Config JSON or built-in name.")
@click.option("--seed", type=int, default=None, help="Master seed (overrides the config).")
@click.option("--runs", type=int, default=1, show_default=True, help="Independent runs.")
@click.option("--noise", type=float, default=0.0, show_default=True,
              help="Noise level in percent.")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Also write report files here.")
def discover(config_path, seed, runs, noise, out_dir):
    """Search for equations on one noise level and print the selected systems."""
    def work():
        result = run_experiment(config_path, runs=runs, seed=seed, noise_levels=[noise])
        for rec in result.records:
            click.echo(f"# run {rec.run} (noise {rec.level:g}%)"
                       + (f" failed: {rec.error}" if rec.error else ""))
            for text in rec.equations:
                click.echo(text)
            if result.truth_labels and not rec.error:
                click.echo(f"# matches ground truth: {'yes' if rec.success else 'no'}")
        if out_dir:
            emit_report(result, out_dir)
    _guard(work)


@main.command()
@click.option("--config", "config_path", required=True, help="Config JSON or built-in name.")
@click.option("--seed", type=int, default=None, help="Master seed (overrides the config).")
@click.option("--runs", type=int, default=None, help="Runs per noise level (overrides).")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
              help="Report directory (default: the config's output_dir).")
def benchmark(config_path, seed, runs, out_dir):
    """Run the full noise sweep and write the report files."""
    def work():
        cfg = load_config(config_path)
        result = run_experiment(cfg, runs=runs, seed=seed, progress=_progress)
        paths = emit_report(result, out_dir or cfg.output_dir)
        click.echo(str(Path(paths["csv"]).parent))
    _guard(work)


@main.command()
@click.option("--in", "in_dir", required=True, type=click.Path(file_okay=False),
              help="Directory written by 'benchmark' or 'discover --out'.")
@click.option("--format", "fmt", type=click.Choice(FORMATS), default="csv", show_default=True)
def report(in_dir, fmt):
    """Print a stored report in CSV, JSON or plot-table form."""
    _guard(lambda: click.echo(render_report(in_dir, fmt), nl=False))


if __name__ == "__main__":
    main()
