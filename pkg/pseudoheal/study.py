"""
study.py

This module prepares blinded panels for human raters and analyses their scores.

Panels show the pathological input, its ground-truth mask and one synthetic
image per method in an independently shuffled order. The position -> method
mapping is written only to `blinding_map.csv` in a separate directory; the
montage renderer never sees method identifiers.

Functions:
- panel_permutations: Seeded per-panel method orders.
- render_panel: Montage of a row of images.
- build_panels: Montages, rater template and blinding map.
- ingest_scores: Validated rater scores joined with the blinding map.
- consensus_scores: Mean over raters per panel, method and criterion.
- bootstrap_paired_test: Bootstrapped paired t-test.
- point_biserial: Correlation of a binary and a continuous variable.
- aggregate: Per-method summary, tests against the best comparator, correlations.
- realness_summary: Fraction of "real" calls per image source.
"""

import logging

from pathlib import Path

import numpy as np
import pandas as pd

from PIL import Image
from pydantic import ValidationError as PydanticValidationError

from .errors import DataError, MetricError
from .models.panel import Panel
from .schemas.study import CRITERIA, RaterScore, RealnessCall

logger = logging.getLogger(__name__)

TEMPLATE_FILE = 'scores_template.csv'
BLINDING_FILE = 'blinding_map.csv'
SCORE_COLUMNS = ['rater_id', 'panel_id', 'position', 'criterion', 'score']
REAL_SOURCE = 'real_healthy'
# human criterion -> quantitative metric
CRITERION_METRICS = {'identity': 'iD', 'healthiness': 'h', 'deformation_correction': 'DeC'}
TILE_GAP = 2


def panel_permutations(n_methods, n_panels, seed=0):
    """(n_panels, n_methods) array; row i is the method order of panel i."""
    rng = np.random.default_rng(seed)
    return np.array([rng.permutation(n_methods) for _ in range(n_panels)], dtype=int).reshape(n_panels, n_methods)


def _to_uint8(image):
    image = np.asarray(image, dtype=np.float64)
    return (np.clip(image, 0.0, 1.0) * 255).round().astype(np.uint8)


def render_panel(tiles):
    """
    Places images side by side on a white background.

    Args:
        tiles (list): 2-D arrays in [0, 1] of equal shape.

    Returns:
        PIL.Image.Image: Greyscale montage.
    """
    height, width = np.asarray(tiles[0]).shape
    montage = Image.new('L', (len(tiles) * width + (len(tiles) - 1) * TILE_GAP, height), color=255)
    for i, tile in enumerate(tiles):
        montage.paste(Image.fromarray(_to_uint8(tile)), (i * (width + TILE_GAP), 0))
    return montage


def build_panels(methods, inputs, masks, out_dir, blinding_dir, seed=0, n_panels=None):
    """
    Builds blinded panels.

    Args:
        methods (list): (method_id, (N, H, W) synthetic images) pairs aligned with inputs.
        inputs (np.ndarray): (N, H, W) pathological inputs.
        masks (np.ndarray): (N, H, W) ground-truth masks.
        out_dir (str | Path): Destination of the montages and the rater template.
        blinding_dir (str | Path): Destination of the blinding map; must differ from out_dir.
        seed (int): Seed of the method orders.
        n_panels (int | None): Panels to build, at most N.

    Returns:
        list: Panel objects.
    """
    out_dir, blinding_dir = Path(out_dir), Path(blinding_dir)
    if out_dir.resolve() == blinding_dir.resolve():
        raise DataError("blinding_leak", "The blinding map must be stored apart from the panels")
    if not methods:
        raise DataError("no_methods", "Panels need at least one method")
    n_panels = len(inputs) if n_panels is None else min(n_panels, len(inputs))
    for method_id, images in methods:
        if len(images) < n_panels:
            raise DataError("missing_images", f"Method {method_id} has {len(images)} images, {n_panels} needed")
    out_dir.mkdir(parents=True, exist_ok=True)
    blinding_dir.mkdir(parents=True, exist_ok=True)

    orders = panel_permutations(len(methods), n_panels, seed)
    panels, template, blinding = [], [], []
    for i, order in enumerate(orders):
        panel_id = f'panel_{i:03d}'
        tiles = [methods[j][1][i] for j in order]
        panel = Panel(panel_id=panel_id, image=inputs[i], mask=masks[i], tiles=tiles)
        render_panel([panel.image, panel.mask, *panel.tiles]).save(out_dir / f'{panel_id}.png')
        panels.append(panel)
        for position, j in enumerate(order):
            blinding.append({'panel_id': panel_id, 'position': position, 'method_id': methods[j][0],
                             'image_index': i})
            template.extend({'rater_id': '', 'panel_id': panel_id, 'position': position,
                             'criterion': criterion, 'score': ''} for criterion in CRITERIA)

    pd.DataFrame(template, columns=SCORE_COLUMNS).to_csv(out_dir / TEMPLATE_FILE, index=False)
    pd.DataFrame(blinding).to_csv(blinding_dir / BLINDING_FILE, index=False)
    logger.info("Wrote %d panels to %s and the blinding map to %s", len(panels), out_dir, blinding_dir)
    return panels


def ingest_scores(csv_path, blinding_map_path):
    """
    Reads rater scores and resolves tile positions to methods.

    Returns:
        pd.DataFrame: One row per validated RaterScore with its `method_id`.

    Raises:
        DataError: On malformed rows, non-binary scores, unknown panels or
            positions, and duplicate (rater, panel, position, criterion) rows.
    """
    raw = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    missing = set(SCORE_COLUMNS) - set(raw.columns)
    if missing:
        raise DataError("missing_columns", f"{csv_path} lacks columns {sorted(missing)}")
    scores = []
    for line, row in enumerate(raw[SCORE_COLUMNS].to_dict('records'), start=2):
        try:
            scores.append(RaterScore.model_validate(
                {**row, 'position': int(row['position']), 'score': int(row['score'])}))
        except (ValueError, PydanticValidationError) as e:
            raise DataError("invalid_score", f"{csv_path}:{line}: {e}") from e

    frame = pd.DataFrame([s.model_dump() for s in scores], columns=SCORE_COLUMNS)
    duplicated = frame.duplicated(['rater_id', 'panel_id', 'position', 'criterion'])
    if duplicated.any():
        first = frame[duplicated].iloc[0].to_dict()
        raise DataError("duplicate_score", f"Duplicate score for {first}")

    blinding = pd.read_csv(blinding_map_path, dtype={'panel_id': str})
    unknown = set(frame['panel_id']) - set(blinding['panel_id'])
    if unknown:
        raise DataError("unknown_panel", f"Scores refer to unknown panels {sorted(unknown)}")
    resolved = frame.merge(blinding, on=['panel_id', 'position'], how='left')
    if resolved['method_id'].isna().any():
        bad = resolved[resolved['method_id'].isna()].iloc[0]
        raise DataError("unknown_position", f"Panel {bad['panel_id']} has no position {bad['position']}")
    logger.info("Ingested %d scores from %d raters", len(resolved), resolved['rater_id'].nunique())
    return resolved


def consensus_scores(scores):
    """Mean score over raters per (panel, method, criterion)."""
    return (scores.groupby(['panel_id', 'method_id', 'criterion'], as_index=False)['score'].mean()
            .sort_values(['criterion', 'method_id', 'panel_id'], ignore_index=True))


def _t_statistic(d):
    n = d.shape[-1]
    with np.errstate(divide='ignore', invalid='ignore'):
        t = d.mean(-1) / (d.std(-1, ddof=1) / np.sqrt(n))
    return np.nan_to_num(t, nan=0.0, posinf=np.inf, neginf=-np.inf)


def bootstrap_paired_test(a, b, n_resamples=10_000, seed=0):
    """
    Bootstrapped paired t-test of mean(a - b) = 0.

    The differences are centred to impose the null, resampled with replacement
    and the two-sided p-value is the fraction of |t*| at least |t_obs|.

    Returns:
        dict: mean difference, observed t and p-value.
    """
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1 or len(d) < 2:
        raise MetricError("too_few_pairs", "The paired test needs at least two paired values")
    if np.allclose(d, d[0]):
        return {'mean_difference': float(d.mean()), 't': 0.0 if d[0] == 0 else float(np.sign(d[0]) * np.inf),
                'p': 1.0 if d[0] == 0 else 0.0}
    t_obs = float(_t_statistic(d))
    rng = np.random.default_rng(seed)
    centred = d - d.mean()
    samples = centred[rng.integers(0, len(d), size=(n_resamples, len(d)))]
    p = float(np.mean(np.abs(_t_statistic(samples)) >= abs(t_obs)))
    return {'mean_difference': float(d.mean()), 't': t_obs, 'p': p}


def point_biserial(binary, continuous):
    """
    Point-biserial correlation (M1 - M0) / s_n * sqrt(p q).

    Raises:
        MetricError: If either variable is constant.
    """
    binary = np.asarray(binary).astype(float)
    continuous = np.asarray(continuous, dtype=np.float64)
    if not np.isin(binary, (0.0, 1.0)).all():
        raise MetricError("non_binary", "Point-biserial correlation needs a 0/1 variable")
    p = binary.mean()
    s_n = continuous.std()
    if p in (0.0, 1.0) or s_n == 0:
        raise MetricError("constant_variable", "Point-biserial correlation is undefined for a constant variable")
    m1, m0 = continuous[binary == 1].mean(), continuous[binary == 0].mean()
    return float((m1 - m0) / s_n * np.sqrt(p * (1 - p)))


def aggregate(scores, metrics=None, n_resamples=10_000, seed=0):
    """
    Summarises resolved rater scores.

    Args:
        scores (pd.DataFrame): Output of ingest_scores.
        metrics (pd.DataFrame | None): Per-image quantitative metrics with columns
            `panel_id`, `method_id` and any of `iD`, `h`, `DeC`.
        n_resamples (int): Bootstrap resamples.
        seed (int): Bootstrap seed.

    Returns:
        dict: `summary` (mean and std of the consensus per method and criterion),
        `tests` (each method against the best other method on per-panel
        consensus) and `correlations` (point-biserial of individual scores and
        the matching metric).
    """
    consensus = consensus_scores(scores)
    summary = (consensus.groupby(['method_id', 'criterion'])['score']
               .agg(mean='mean', std=lambda s: float(np.std(s)), n_panels='count').reset_index())

    tests = []
    for criterion, group in consensus.groupby('criterion'):
        table = group.pivot(index='panel_id', columns='method_id', values='score').dropna()
        means = table.mean().sort_values(ascending=False, kind='stable')
        for method in sorted(table.columns):
            others = means.drop(method)
            if others.empty or len(table) < 2:
                continue
            comparator = others.index[0]
            result = bootstrap_paired_test(table[method].to_numpy(), table[comparator].to_numpy(),
                                           n_resamples, seed)
            tests.append({'criterion': criterion, 'method_id': method, 'comparator': comparator, **result})

    correlations = []
    if metrics is not None:
        joined = scores.merge(metrics, on=['panel_id', 'method_id'], how='inner')
        for criterion, metric in CRITERION_METRICS.items():
            if metric not in joined.columns:
                continue
            rows = joined[joined['criterion'] == criterion].dropna(subset=[metric])
            if rows.empty:
                continue
            try:
                r = point_biserial(rows['score'], rows[metric])
            except MetricError as e:
                logger.warning("Skipping %s correlation: %s", criterion, e.description)
                continue
            correlations.append({'criterion': criterion, 'metric': metric, 'r': r, 'n': len(rows)})

    return {
        'summary': summary.sort_values(['criterion', 'method_id'], ignore_index=True),
        'tests': pd.DataFrame(tests, columns=['criterion', 'method_id', 'comparator', 'mean_difference', 't', 'p']),
        'correlations': pd.DataFrame(correlations, columns=['criterion', 'metric', 'r', 'n']),
    }


def realness_summary(calls, truth):
    """
    Fraction of "real" calls per image source.

    Args:
        calls (list | pd.DataFrame): RealnessCall rows.
        truth (dict): image_id -> source; real healthy images map to 'real_healthy'.

    Returns:
        pd.DataFrame: `source`, `n_calls`, `realness`, with the real-healthy
        benchmark row first.
    """
    records = calls.to_dict('records') if isinstance(calls, pd.DataFrame) else calls
    try:
        calls = [c if isinstance(c, RealnessCall) else RealnessCall.model_validate(c) for c in records]
    except PydanticValidationError as e:
        raise DataError("invalid_call", str(e)) from e
    unknown = {c.image_id for c in calls} - set(truth)
    if unknown:
        raise DataError("unknown_image", f"Calls refer to unknown images {sorted(unknown)}")

    frame = pd.DataFrame({'source': [truth[c.image_id] for c in calls],
                          'real': [c.call == 'real' for c in calls]})
    rows = []
    for source in [REAL_SOURCE] + sorted(set(truth.values()) - {REAL_SOURCE}):
        picked = frame[frame['source'] == source]['real']
        rows.append({'source': source, 'n_calls': len(picked),
                     'realness': float(picked.mean()) if len(picked) else float('nan')})
    return pd.DataFrame(rows)
