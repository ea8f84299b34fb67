"""
commands/study.py

This module defines the human evaluation commands.

Functions:
- panels: Renders blinded panels from the test split of several runs.
- scores: Ingests rater scores and writes the statistical summaries.
"""

import logging

from pathlib import Path

import click
import numpy as np
import pandas as pd

from ..checkpoint import load_bundle
from ..data import load_datasets
from ..errors import DataError, MetricError
from ..evaluation import apply, dec_per_sample, healthiness_per_sample, identity_per_sample
from ..pipeline import load_auxiliaries
from ..report import method_label, read_run_config
from ..study import BLINDING_FILE, aggregate, build_panels, ingest_scores, realness_summary
from ..training import FINAL_CHECKPOINT, to_batch
from .options import load_optional_config, optional_config_option

logger = logging.getLogger(__name__)

PANEL_METRICS_FILE = 'panel_metrics.csv'


def _healthiness_or_nan(synth, inputs, judge):
    try:
        return healthiness_per_sample(synth, inputs, judge)
    except MetricError as e:
        if e.code != 'undefined_healthiness':
            raise
        logger.warning("Panel healthiness not reported: %s", e.description)
        return np.full(len(inputs), np.nan)


@click.command()
@click.option('--run', 'run_dirs', multiple=True, required=True, type=click.Path(exists=True, file_okay=False),
              help='Run directory of one method; repeat for every method.')
@click.option('--data', 'data_dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Dataset directory.')
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Panel directory for raters.')
@click.option('--blinding-dir', required=True, type=click.Path(file_okay=False),
              help='Directory for the blinding map, kept away from raters.')
def panels(run_dirs, data_dir, out, blinding_dir):
    """Render blinded panels of test slices, one tile per method."""
    config = read_run_config(run_dirs[0])
    datasets = load_datasets(data_dir)
    test_p = datasets.get(('test', 'pathological_pool'))
    if test_p is None or len(test_p) == 0:
        raise DataError("empty_pool", f"{data_dir} has no test pathological slices")
    n = min(config.study.n_panels, len(test_p))
    inputs, masks = test_p.images()[:n], test_p.masks()[:n]
    judge, clf = load_auxiliaries(config, data_dir, datasets)

    methods, metrics = [], []
    for run_dir in run_dirs:
        method_id = method_label(read_run_config(run_dir).train)
        synth = apply(load_bundle(Path(run_dir) / FINAL_CHECKPOINT).g, inputs)
        methods.append((method_id, synth.numpy()[:, 0]))
        frame = pd.DataFrame({
            'image_index': range(n),
            'method_id': method_id,
            'iD': identity_per_sample(inputs, synth, to_batch(masks), config.eval.ms_ssim_window),
            'h': _healthiness_or_nan(synth, inputs, judge),
            'DeC': dec_per_sample(synth, clf),
        })
        metrics.append(frame)
    if len({m for m, _ in methods}) != len(methods):
        raise DataError("duplicate_method", "Two runs share a method label")

    build_panels(methods, inputs, masks, out, blinding_dir, seed=config.study.seed)
    blinding = pd.read_csv(Path(blinding_dir) / BLINDING_FILE)
    panel_metrics = blinding.merge(pd.concat(metrics), on=['image_index', 'method_id'])
    panel_metrics.to_csv(Path(blinding_dir) / PANEL_METRICS_FILE, index=False)
    click.echo(out)


@click.command()
@click.option('--scores', 'scores_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Filled-in scores CSV.')
@click.option('--blinding-dir', required=True, type=click.Path(exists=True, file_okay=False),
              help='Directory holding the blinding map.')
@click.option('--out', required=True, type=click.Path(file_okay=False), help='Directory of the summaries.')
@click.option('--calls', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Real-or-fake calls CSV (rater_id,image_id,call).')
@click.option('--truth', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Image sources CSV (image_id,source) for the real-or-fake test.')
@optional_config_option
@click.option('--resamples', type=int, default=None,
              help='Bootstrap resamples; defaults to study.bootstrap_resamples of the config.')
@click.option('--seed', type=int, default=None, help='Bootstrap seed; defaults to study.seed of the config.')
def scores(scores_path, blinding_dir, out, calls, truth, config_path, resamples, seed):
    """Aggregate rater scores against the blinding map."""
    study = load_optional_config(config_path).study
    resamples = study.bootstrap_resamples if resamples is None else resamples
    seed = study.seed if seed is None else seed
    blinding_dir, out = Path(blinding_dir), Path(out)
    resolved = ingest_scores(scores_path, blinding_dir / BLINDING_FILE)
    metrics_file = blinding_dir / PANEL_METRICS_FILE
    metrics = pd.read_csv(metrics_file, dtype={'panel_id': str}) if metrics_file.is_file() else None
    if metrics is not None:
        metrics = metrics.drop(columns=['position', 'image_index'], errors='ignore')
    results = aggregate(resolved, metrics, n_resamples=resamples, seed=seed)

    out.mkdir(parents=True, exist_ok=True)
    for name, frame in results.items():
        frame.to_csv(out / f'study_{name}.csv', index=False)
    if calls is not None:
        if truth is None:
            raise DataError("missing_truth", "--calls needs --truth")
        sources = pd.read_csv(truth, dtype=str)
        summary = realness_summary(pd.read_csv(calls, dtype=str),
                                   dict(zip(sources['image_id'], sources['source'])))
        summary.to_csv(out / 'realness.csv', index=False)
    click.echo(out)
