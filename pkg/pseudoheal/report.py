"""
report.py

This module records run metadata and joins evaluated runs into one summary.

A run directory holds `config.json` (the experiment document that produced
it), `run.json` (the summary table it belongs to and its method label),
`losses.csv`, `checkpoints/` and, after evaluation, `summary.csv`.

Functions:
- method_label / table_for: Name and summary table of a training config.
- write_run_config / read_run_config: Config snapshot of a run directory.
- collect_runs: One row per evaluated run found under a directory.
- summarise_methods: Mean and std over seeds per table and method.
- build_report: Writes the joined summary.
"""

import json
import logging

from pathlib import Path

import pandas as pd

from .errors import DataError
from .schemas.experiment import validate_experiment_config

logger = logging.getLogger(__name__)

CONFIG_FILE = 'config.json'
RUN_FILE = 'run.json'
SUMMARY_FILE = 'summary.csv'
TABLES = ('comparison', 'semi_supervised', 'ablation')
METRIC_COLUMNS = ['h', 'iD', 'DeC', 'dice_diffmap', 'dice_segmentor']


def method_label(train_cfg):
    if train_cfg.baseline != 'none':
        return train_cfg.baseline
    if train_cfg.setting == 'semi':
        return f'semi_{train_cfg.ratio:.2f}'
    if train_cfg.ablation != 'none':
        return f'{train_cfg.setting}_{train_cfg.ablation}'
    return f'proposed_{train_cfg.setting}'


def table_for(train_cfg):
    if train_cfg.setting == 'semi':
        return 'semi_supervised'
    if train_cfg.ablation != 'none':
        return 'ablation'
    return 'comparison'


def write_run_config(run_dir, config, table=None):
    """
    Writes the config snapshot and the run metadata.

    An existing snapshot must match the new one, so a run directory is never
    shared by two configurations.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    document = config.model_dump(mode='json')
    config_file = run_dir / CONFIG_FILE
    if config_file.is_file() and json.loads(config_file.read_text()) != document:
        raise DataError("run_dir_conflict", f"{run_dir} already holds a run with a different config")
    config_file.write_text(json.dumps(document, indent=2, sort_keys=True))
    meta = {'table': table or table_for(config.train), 'method': method_label(config.train),
            'seed': config.train.seed}
    (run_dir / RUN_FILE).write_text(json.dumps(meta, indent=2))


def read_run_config(run_dir):
    config_file = Path(run_dir) / CONFIG_FILE
    if not config_file.is_file():
        raise DataError("not_a_run", f"{run_dir} has no {CONFIG_FILE}")
    return validate_experiment_config(json.loads(config_file.read_text()))


def collect_runs(runs_dir):
    """
    Finds every evaluated run below `runs_dir`.

    Returns:
        pd.DataFrame: `table`, `method`, `seed`, `run_dir` and the summary columns.
    """
    rows = []
    for summary_file in sorted(Path(runs_dir).rglob(SUMMARY_FILE)):
        run_dir = summary_file.parent
        meta_file = run_dir / RUN_FILE
        if meta_file.is_file():
            meta = json.loads(meta_file.read_text())
        else:
            train_cfg = read_run_config(run_dir).train
            meta = {'table': table_for(train_cfg), 'method': method_label(train_cfg), 'seed': train_cfg.seed}
        for summary in pd.read_csv(summary_file).to_dict('records'):
            rows.append({**meta, 'run_dir': str(run_dir), **summary})
    columns = ['table', 'method', 'seed', 'run_dir']
    frame = pd.DataFrame(rows)
    if frame.empty:
        return pd.DataFrame(columns=columns + METRIC_COLUMNS)
    frame['table'] = pd.Categorical(frame['table'], categories=TABLES, ordered=True)
    return frame.sort_values(['table', 'method', 'seed'], ignore_index=True)


def summarise_methods(runs):
    """Mean and std over seeds of every metric, per table and method."""
    metrics = [c for c in METRIC_COLUMNS if c in runs.columns]
    grouped = runs.groupby(['table', 'method'], observed=True)[metrics]
    summary = grouped.mean().join(grouped.std(ddof=0), rsuffix='_seed_std')
    summary.insert(0, 'n_seeds', runs.groupby(['table', 'method'], observed=True).size())
    return summary.reset_index()


def build_report(runs_dir, out_path):
    """
    Joins the summaries of every run into one table.

    Writes `out_path` with one row per run and `<stem>_by_method.csv` with the
    seed-averaged rows.

    Returns:
        pd.DataFrame: The per-run table.
    """
    runs = collect_runs(runs_dir)
    if runs.empty:
        raise DataError("no_runs", f"No evaluated runs found under {runs_dir}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    runs.to_csv(out_path, index=False)
    summarise_methods(runs).to_csv(out_path.with_name(f'{out_path.stem}_by_method.csv'), index=False)
    logger.info("Report with %d runs written to %s", len(runs), out_path)
    return runs
