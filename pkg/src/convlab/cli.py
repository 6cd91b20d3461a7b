"""Command line interface.

``convlab run <experiment>`` executes a named experiment, writing CSV
data, PNG figures and a metadata sidecar to the output directory.
``convlab weights`` tabulates the six closed-form strategies over a
spread grid.  ``convlab check`` runs the acceptance suite.

Exit codes: 0 success, 1 acceptance-check failure, 2 config error.
"""

from __future__ import annotations

import sys

import click
import numpy as np

from .experiments import EXPERIMENTS, ConfigError, config_from_file, named_config, run_experiment
from .model import ParameterError, load_params
from .strategy import (
    optimal_beta_neutral_full,
    optimal_beta_neutral_partial,
    optimal_delta_neutral_full,
    optimal_delta_neutral_partial,
    optimal_full,
    optimal_partial,
)


@click.group()
def main():
    """Regime-switching convergence trading toolkit."""


@main.command()
@click.argument("experiment", type=click.Choice(EXPERIMENTS))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML parameter file overriding the built-in defaults.")
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out",
              show_default=True)
def run(experiment, config_path, seed, out_dir):
    """Run a named experiment and write its artifacts."""
    try:
        if config_path is not None:
            cfg = config_from_file(experiment, config_path, seed=seed, out_dir=out_dir)
        else:
            cfg = named_config(experiment, seed=seed, out_dir=out_dir)
        files = run_experiment(cfg)
    except (ConfigError, ParameterError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    for f in files:
        click.echo(str(f))


def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        if n < 2 or not hi > lo:
            raise ValueError
    except ValueError:
        raise click.BadParameter(f"expected a:b:n with b > a and n >= 2, got {spec!r}")
    return np.linspace(lo, hi, n)


@main.command()
@click.option("--x-grid", default="-1:1:21", show_default=True,
              help="Spread grid as a:b:n.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="TOML parameter file (defaults to the fig1 parameters).")
@click.option("--p1", "p1_values", multiple=True, type=float, default=(0.0, 0.5, 1.0),
              show_default=True, help="Filter probabilities of regime 1 to tabulate.")
def weights(x_grid, config_path, p1_values):
    """Print a CSV table of the six strategies over a spread grid."""
    xs = _parse_grid(x_grid)
    try:
        if config_path is not None:
            params = load_params(config_path)
        else:
            params = named_config("fig1").params
    except (ConfigError, ParameterError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)

    def fmt(v):
        return format(float(v), ".12g")

    click.echo("info,variant,state,x,h1,h2,hm")
    full = {
        "unrestricted": optimal_full,
        "beta_neutral": optimal_beta_neutral_full,
        "delta_neutral": optimal_delta_neutral_full,
    }
    for variant, fn in full.items():
        for i in range(params.K):
            for x in xs:
                w = fn(x, i, params)
                click.echo(f"full,{variant},{i + 1},{fmt(x)},{fmt(w.h1)},{fmt(w.h2)},{fmt(w.hm)}")
    if params.regimes.constant_lambda and params.K == 2:
        partial = {
            "unrestricted": optimal_partial,
            "beta_neutral": optimal_beta_neutral_partial,
            "delta_neutral": optimal_delta_neutral_partial,
        }
        for variant, fn in partial.items():
            for p1 in p1_values:
                p = np.array([p1, 1.0 - p1])
                for x in xs:
                    w = fn(x, p, params)
                    click.echo(
                        f"partial,{variant},p1={fmt(p1)},{fmt(x)},{fmt(w.h1)},{fmt(w.h2)},{fmt(w.hm)}"
                    )
    else:
        click.echo(
            "# partial-information strategies skipped: they require two regimes "
            "with regime-independent intensities",
            err=True,
        )


@main.command()
@click.option("--only", type=int, multiple=True,
              help="Run only the given criterion numbers (repeatable).")
def check(only):
    """Run the acceptance suite; exit 1 if any criterion fails."""
    from .acceptance import run_checks

    results = run_checks(
        selected=set(only) or None,
        progress=lambda r: click.echo(r.line()),
    )
    failed = [r for r in results if not r.passed]
    click.echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
