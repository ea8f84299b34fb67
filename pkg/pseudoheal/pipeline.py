"""
pipeline.py

This module wires datasets, training and evaluation together for the commands.

Functions:
- training_pools: Pathological, healthy and mask pools of the training split.
- run_training: Trains one configuration into a run directory.
- load_auxiliaries: Judge segmentor and deformation classifier, trained once per dataset.
- evaluate_run: Evaluates a run directory and writes its summary.
"""

import hashlib
import json
import logging

from pathlib import Path

import numpy as np
import pandas as pd
import torch

from .checkpoint import load_bundle
from .data import histogram_check, load_datasets
from .errors import DataError
from .evaluation import DecClassifier, JudgeSegmentor, evaluate_bundle, train_dec_classifier, train_judge
from .models.sample import Dataset
from .nets import build_critic, build_segmentor
from .report import SUMMARY_FILE, read_run_config, write_run_config
from .training import FINAL_CHECKPOINT, LAST_CHECKPOINT, train

logger = logging.getLogger(__name__)

AUXILIARY_FILE = 'auxiliary/evaluators.pt'


def _pool(datasets, split, tag):
    return datasets.get((split, tag), Dataset((), tag, split))


def training_pools(datasets):
    """
    Returns:
        tuple: (pathological, healthy, mask pool) training datasets.
    """
    return (_pool(datasets, 'train', 'pathological_pool'), _pool(datasets, 'train', 'healthy_pool'),
            _pool(datasets, 'train', 'mask_pool'))


def run_training(config, data_dir, run_dir, table=None):
    """
    Trains the configuration into `run_dir`, resuming from its last checkpoint.

    Returns:
        TrainResult: Bundle, loss log and counters.
    """
    write_run_config(run_dir, config, table)
    datasets = load_datasets(data_dir)
    dataset_p, dataset_h, mask_pool = training_pools(datasets)
    if len(dataset_p) and len(dataset_h):
        histogram_check(dataset_p, dataset_h, config.preprocess.histogram_bins)
    return train(dataset_p, dataset_h, mask_pool if len(mask_pool) else None, config.train, run_dir)


def _auxiliary_key(config, data_dir):
    manifest = hashlib.sha256((Path(data_dir) / 'manifest.json').read_bytes()).hexdigest()
    return json.dumps({'eval': config.eval.model_dump(mode='json'), 'net': config.train.net.model_dump(),
                       'manifest': manifest}, sort_keys=True)


def _with_empty_masks(pathological, healthy):
    images = [d.images() for d in (pathological, healthy) if len(d)]
    masks = [d.masks() if d.domain_tag == 'pathological_pool' else np.zeros_like(d.masks())
             for d in (pathological, healthy) if len(d)]
    if not images:
        return np.empty((0, 0, 0), np.float32), np.empty((0, 0, 0), np.uint8)
    return np.concatenate(images), np.concatenate(masks)


def load_auxiliaries(config, data_dir, datasets=None):
    """
    Loads or trains the judge segmentor and the deformation classifier.

    Both are trained on the training split and fine-tuned on validation, then
    cached next to the dataset.

    Returns:
        tuple: (JudgeSegmentor, DecClassifier).
    """
    datasets = datasets if datasets is not None else load_datasets(data_dir)
    image_size = next(iter(datasets.values())).samples[0].shape
    cache = Path(data_dir) / AUXILIARY_FILE
    key = _auxiliary_key(config, data_dir)
    net_cfg, opts = config.train.net, config.eval

    if cache.is_file():
        stored = torch.load(cache, map_location='cpu', weights_only=False)
        if stored.get('key') == key:
            judge_net, dec_net = build_segmentor(net_cfg), build_critic(net_cfg, image_size)
            judge_net.load_state_dict(stored['judge'])
            dec_net.load_state_dict(stored['dec'])
            logger.info("Loaded cached evaluators from %s", cache)
            return (JudgeSegmentor(judge_net.eval(), opts.judge_threshold, trained=True),
                    DecClassifier(dec_net.eval(), opts, trained=True))

    train_x, train_m = _with_empty_masks(_pool(datasets, 'train', 'pathological_pool'),
                                         _pool(datasets, 'train', 'healthy_pool'))
    val_x, val_m = _with_empty_masks(_pool(datasets, 'val', 'pathological_pool'),
                                     _pool(datasets, 'val', 'healthy_pool'))
    if len(train_x) == 0:
        raise DataError("empty_pool", "The judge needs training slices")
    judge = train_judge(train_x, train_m, val_x, val_m, net_cfg, opts)

    def images(split, tag):
        pool = _pool(datasets, split, tag)
        return pool.images() if len(pool) else np.empty((0, *image_size), np.float32)

    clf = train_dec_classifier(images('train', 'healthy_pool'), images('train', 'deformed_pool'),
                               images('val', 'healthy_pool'), images('val', 'deformed_pool'), net_cfg, opts)
    cache.parent.mkdir(parents=True, exist_ok=True)
    torch.save({'key': key, 'judge': judge.net.state_dict(), 'dec': clf.net.state_dict()}, cache)
    return judge, clf


def evaluate_run(run_dir, data_dir, report_path=None):
    """
    Evaluates the newest checkpoint of a run on the test split.

    Writes `summary.csv` into the run directory and, when `report_path` is
    given, the per-sample report there.

    Returns:
        MetricReport: The evaluation.
    """
    run_dir = Path(run_dir)
    config = read_run_config(run_dir)
    checkpoint = run_dir / FINAL_CHECKPOINT
    if not checkpoint.is_file():
        checkpoint = run_dir / LAST_CHECKPOINT
    bundle = load_bundle(checkpoint)
    datasets = load_datasets(data_dir)
    judge, clf = load_auxiliaries(config, data_dir, datasets)
    report = evaluate_bundle(bundle, _pool(datasets, 'test', 'pathological_pool'), judge, clf, config.eval,
                             test_h=_pool(datasets, 'test', 'healthy_pool'), run=run_dir.name)
    pd.DataFrame([report.summary_row()]).to_csv(run_dir / SUMMARY_FILE, index=False)
    if report_path is not None:
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report.to_frame().to_csv(report_path, index=False)
    return report
