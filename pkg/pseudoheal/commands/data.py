"""
commands/data.py

This module defines the dataset creation commands.

Functions:
- phantom: Generates the phantom pools and writes them to a dataset directory.
- prepare: Preprocesses external volumes into a dataset directory.
"""

import logging

import click

from ..data import build_phantom_datasets, prepare_volumes, save_dataset
from .options import config_option, load_config, seed_option

logger = logging.getLogger(__name__)


@click.command()
@config_option
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Dataset directory; defaults to paths.data_dir of the config.')
@seed_option
def phantom(config_path, out, seed):
    """Generate the phantom dataset."""
    config = load_config(config_path, seed)
    out = out or config.paths.data_dir
    save_dataset(out, build_phantom_datasets(config))
    click.echo(out)


@click.command()
@config_option
@click.option('--volumes', required=True, type=click.Path(exists=True, file_okay=False),
              help='Directory of <name>.npy volumes with optional <name>_mask.npy annotations.')
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Dataset directory; defaults to paths.data_dir of the config.')
def prepare(config_path, volumes, out):
    """Preprocess external volumes into a dataset."""
    config = load_config(config_path)
    out = out or config.paths.data_dir
    save_dataset(out, prepare_volumes(volumes, config))
    click.echo(out)
