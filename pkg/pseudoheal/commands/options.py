"""
commands/options.py

Options and helpers shared by the commands.
"""

import click

from ..schemas.experiment import ExperimentConfig, load_experiment_config

config_option = click.option('--config', 'config_path', required=True, type=click.Path(dir_okay=False),
                             help='Experiment config (JSON).')
optional_config_option = click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                                      help='Experiment config (JSON); its values apply unless a flag overrides them.')
seed_option = click.option('--seed', type=int, default=None, help='Overrides the training and phantom seeds.')


def load_config(config_path, seed=None):
    """Loads the experiment config and applies a seed override."""
    config = load_experiment_config(config_path)
    return config if seed is None else config.with_seed(seed)


def load_optional_config(config_path):
    """Loads the experiment config, or the defaults when no path is given."""
    return ExperimentConfig() if config_path is None else load_experiment_config(config_path)
