"""
commands/report.py

This module defines the `report` command.
"""

import click

from ..report import build_report
from .options import load_optional_config, optional_config_option


@click.command()
@optional_config_option
@click.option('--runs', 'runs_dir', type=click.Path(exists=True, file_okay=False), default=None,
              help='Directory searched for evaluated runs; defaults to paths.runs_dir of the config.')
@click.option('--out', type=click.Path(dir_okay=False), default=None,
              help='Summary CSV; defaults to paths.report of the config, or <runs>/report.csv without one.')
def report(config_path, runs_dir, out):
    """Join every evaluated run into one summary table."""
    config = load_optional_config(config_path)
    runs_dir = runs_dir or config.paths.runs_dir
    if out is None:
        out = config.paths.report if config_path is not None else f'{runs_dir}/report.csv'
    build_report(runs_dir, out)
    click.echo(out)
