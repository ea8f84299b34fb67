"""
commands/experiments.py

This module defines the training and evaluation commands.

Functions:
- train: Trains one configuration into a run directory.
- evaluate: Evaluates a run directory (`pseudoheal eval`).
- sweep_semi: Trains and evaluates one run per paired-sample ratio.
- ablate: Trains and evaluates the ablation variants and the baselines, then
  compares each with the full model.
"""

import logging

from pathlib import Path

import click

from ..evaluation import compare_with_reference
from ..pipeline import evaluate_run, run_training
from .options import config_option, load_config, seed_option

logger = logging.getLogger(__name__)

data_option = click.option('--data', 'data_dir', type=click.Path(file_okay=False), default=None,
                           help='Dataset directory; defaults to paths.data_dir of the config.')


@click.command()
@config_option
@data_option
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Run directory.')
@seed_option
def train(config_path, data_dir, out, seed):
    """Train a model; an interrupted run resumes from its last checkpoint."""
    config = load_config(config_path, seed)
    result = run_training(config, data_dir or config.paths.data_dir, out)
    logger.info("Finished %s: %d generator updates, %d critic updates", out,
                result.counters['generator_updates'], result.counters['critic_updates'])


@click.command('eval')
@click.option('--bundle', 'run_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Run directory holding config.json and checkpoints.')
@click.option('--data', 'data_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Dataset directory.')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), default=None,
              help='Per-sample report CSV.')
def evaluate(run_dir, data_dir, report_path):
    """Evaluate a trained run on the test split."""
    report = evaluate_run(run_dir, data_dir, report_path)
    click.echo(repr(report))


def _train_and_evaluate(config, data_dir, run_dir, table):
    run_training(config, data_dir, run_dir, table)
    return evaluate_run(run_dir, data_dir, Path(run_dir) / 'report.csv')


@click.command('sweep-semi')
@config_option
@data_option
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Parent of the run directories; defaults to <runs_dir>/semi_supervised.')
@seed_option
def sweep_semi(config_path, data_dir, out, seed):
    """Train and evaluate one semi-supervised run per ratio of paired samples."""
    config = load_config(config_path, seed)
    data_dir = data_dir or config.paths.data_dir
    out = Path(out or Path(config.paths.runs_dir) / 'semi_supervised')
    for ratio in config.eval.sweep_ratios:
        run_dir = out / f'ratio_{ratio:.2f}_seed{config.train.seed}'
        logger.info("Semi-supervised run with ratio %.2f -> %s", ratio, run_dir)
        _train_and_evaluate(config.with_train(setting='semi', ratio=ratio), data_dir, run_dir, 'semi_supervised')


@click.command()
@config_option
@data_option
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Parent of the run directories; defaults to <runs_dir>.')
@seed_option
def ablate(config_path, data_dir, out, seed):
    """Train and evaluate the ablation variants and the baselines."""
    config = load_config(config_path, seed)
    data_dir = data_dir or config.paths.data_dir
    out = Path(out or config.paths.runs_dir)
    suffix = f'seed{config.train.seed}'
    reports = {}
    for ablation in config.eval.ablations:
        run_dir = out / 'ablation' / f'{config.train.setting}_{ablation}_{suffix}'
        variant = config.with_train(ablation=ablation, baseline='none')
        reports[ablation] = _train_and_evaluate(variant, data_dir, run_dir, 'ablation')
    for baseline in config.eval.baselines:
        run_dir = out / 'comparison' / f'{baseline}_{suffix}'
        variant = config.with_train(baseline=baseline, ablation='none')
        reports[baseline] = _train_and_evaluate(variant, data_dir, run_dir, 'comparison')
    if 'none' in reports:
        path = out / f'comparisons_{config.train.setting}_{suffix}.csv'
        compare_with_reference(reports.pop('none'), reports).to_csv(path, index=False)
        logger.info("Paired comparisons with the full model -> %s", path)
