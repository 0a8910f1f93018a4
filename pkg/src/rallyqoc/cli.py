"""Command-line entry points: run, aggregate, plot-data.

Exit codes: 0 success (including runs that miss their scientific targets —
that is data, not an error), 1 configuration error, 2 runtime failure.
"""

import os
import sys

import click

from . import __version__, runner
from .errors import ParseError, SchemaMismatch

_CONFIG_ERRORS = (ParseError, SchemaMismatch, OSError, ValueError)


def _parse_seeds(text: str):
    """Accept '0,3,7' or an inclusive range '0..9'."""
    if ".." in text:
        lo, _, hi = text.partition("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s.strip() != ""]


@click.group()
@click.version_option(__version__)
def main():
    """Pulse-sequence optimization experiments: seeded runs, deterministic
    aggregation, and plot-ready tables."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--seeds", default=None,
              help="Replace the config seed list: '0,1,2' or '0..9'.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--workers", default=None, type=int,
              help=f"Worker processes (default ${runner.WORKERS_ENV} or 1).")
@click.option("--override", multiple=True,
              help="Scalar config override, e.g. optimizer.target_score=1e-6."
                   " Repeatable.")
def run(config_path, seeds, out, workers, override):
    """Execute the experiment described by CONFIG_PATH."""
    try:
        cfg = runner.load_config(config_path)
        if override:
            cfg = runner.apply_overrides(cfg, override)
        if seeds:
            cfg["seeds"] = _parse_seeds(seeds)
            if not cfg["seeds"]:
                raise SchemaMismatch("seed list is empty")
    except _CONFIG_ERRORS as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    out_dir = out or cfg.get("output") or f"results_{cfg['experiment']}"
    if workers is None:
        workers = int(os.environ.get(runner.WORKERS_ENV, "1"))
    try:
        where = runner.run_experiment(cfg, out_dir, workers)
    except Exception as exc:  # runtime failure -> exit 2
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(2)
    click.echo(str(where / "aggregate.csv"))
    sys.exit(0)


@main.command()
@click.argument("directory", type=click.Path())
@click.option("--out", default=None, help="Aggregate CSV path.")
def aggregate(directory, out):
    """Re-aggregate the per-seed records under DIRECTORY."""
    try:
        path = runner.aggregate_dir(directory, out)
    except _CONFIG_ERRORS as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(2)
    click.echo(str(path))
    sys.exit(0)


@main.command("plot-data")
@click.argument("path", type=click.Path())
@click.option("--kind", required=True,
              type=click.Choice(runner.PLOT_KINDS))
@click.option("--out", default=None, help="Output CSV path.")
def plot_data(path, kind, out):
    """Emit a long-format plot table from the run directory at PATH."""
    try:
        target = runner.emit_plot_data(path, kind, out)
    except _CONFIG_ERRORS as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:
        click.echo(f"runtime failure: {exc}", err=True)
        sys.exit(2)
    click.echo(str(target))
    sys.exit(0)


if __name__ == "__main__":
    main()
