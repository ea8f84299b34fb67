"""
models/report.py

This module defines the `MetricReport` record produced by evaluation.

Classes:
- MetricReport: Aggregate metrics with the per-sample arrays behind them.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

METRICS = ('h', 'iD', 'DeC', 'dice_diffmap', 'dice_segmentor')


@dataclass
class MetricReport:
    """
    Represents the quantitative evaluation of one run.

    Every metric is the mean of its per-sample array. For healthiness the
    per-sample value is 1 - N(judge(synth_i)) / mean_j N(judge(x_p_j)), so its
    mean equals the ratio of batch means. A metric that does not apply to the
    run (e.g. segmentor Dice for a baseline) holds an empty array.

    Attributes:
        per_sample (dict): metric name -> 1-D np.ndarray.
        run (str): Run name.
        extras (dict): Diagnostic values (iteration trajectories, IoUs, ...).
    """
    per_sample: dict = field(default_factory=dict)
    run: str = ''
    extras: dict = field(default_factory=dict)

    @property
    def n_samples(self):
        return max((len(v) for v in self.per_sample.values()), default=0)

    def mean(self, metric):
        values = self.per_sample.get(metric)
        if values is None or len(values) == 0:
            return float('nan')
        return float(np.mean(values))

    def std(self, metric):
        values = self.per_sample.get(metric)
        if values is None or len(values) == 0:
            return float('nan')
        return float(np.std(values))

    @property
    def h(self):
        return self.mean('h')

    @property
    def iD(self):
        return self.mean('iD')

    @property
    def DeC(self):
        return self.mean('DeC')

    @property
    def dice_diffmap(self):
        return self.mean('dice_diffmap')

    @property
    def dice_segmentor(self):
        return self.mean('dice_segmentor')

    def summary_row(self):
        """
        Converts the report to one summary row.

        Returns:
            dict: run, n_samples, and mean/std of every metric.
        """
        row = {'run': self.run, 'n_samples': self.n_samples}
        for metric in METRICS:
            row[metric] = self.mean(metric)
            row[f'{metric}_std'] = self.std(metric)
        for key, value in self.extras.items():
            if np.isscalar(value):
                row[key] = value
        return row

    def to_frame(self):
        """
        Converts the report to per-sample rows followed by one aggregate row.

        Returns:
            pd.DataFrame: Columns `row`, `index` and one column per metric.
        """
        rows = []
        for i in range(self.n_samples):
            row = {'row': 'sample', 'index': i}
            for metric in METRICS:
                values = self.per_sample.get(metric)
                row[metric] = float(values[i]) if values is not None and i < len(values) else np.nan
            rows.append(row)
        aggregate = {'row': 'mean', 'index': -1}
        aggregate.update({metric: self.mean(metric) for metric in METRICS})
        dispersion = {'row': 'std', 'index': -1}
        dispersion.update({metric: self.std(metric) for metric in METRICS})
        return pd.DataFrame(rows + [aggregate, dispersion])

    def __repr__(self):
        return f'<MetricReport {self.run} h={self.h:.3f} iD={self.iD:.3f}>'
