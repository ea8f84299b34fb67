"""
tests/test_study.py

Tests of the blinded panel tooling and the rater score statistics.
"""

import numpy as np
import pandas as pd
import pytest

from PIL import Image
from scipy import stats

from pseudoheal.errors import DataError, MetricError
from pseudoheal.study import (BLINDING_FILE, REAL_SOURCE, SCORE_COLUMNS, TEMPLATE_FILE, TILE_GAP, aggregate,
                              bootstrap_paired_test, build_panels, consensus_scores, ingest_scores,
                              panel_permutations, point_biserial, realness_summary, render_panel)

SIZE = 16


def synthetic_methods(n_methods=2, n_images=3):
    rng = np.random.default_rng(0)
    return [(f'method_{k}', rng.uniform(size=(n_images, SIZE, SIZE))) for k in range(n_methods)]


@pytest.fixture
def panels_dirs(tmp_path):
    inputs = np.random.default_rng(1).uniform(size=(3, SIZE, SIZE))
    masks = np.zeros((3, SIZE, SIZE), dtype=np.uint8)
    panels = build_panels(synthetic_methods(), inputs, masks, tmp_path / 'panels', tmp_path / 'blinding', seed=4)
    return panels, tmp_path / 'panels', tmp_path / 'blinding'


def write_scores(path, blinding_dir, score_of, raters=('r1', 'r2')):
    """Fills the rater sheet from the blinding map, scoring each tile with score_of(method_id, criterion)."""
    blinding = pd.read_csv(blinding_dir / BLINDING_FILE, dtype={'panel_id': str})
    rows = [{'rater_id': rater, 'panel_id': row.panel_id, 'position': row.position, 'criterion': criterion,
             'score': score_of(row.method_id, criterion)}
            for rater in raters for row in blinding.itertuples()
            for criterion in ('identity', 'healthiness', 'deformation_correction')]
    pd.DataFrame(rows, columns=SCORE_COLUMNS).to_csv(path, index=False)
    return path


def test_build_panels_layout(panels_dirs):
    panels, out_dir, blinding_dir = panels_dirs
    assert [p.panel_id for p in panels] == ['panel_000', 'panel_001', 'panel_002']
    assert len(pd.read_csv(out_dir / TEMPLATE_FILE)) == 3 * 2 * 3
    blinding = pd.read_csv(blinding_dir / BLINDING_FILE)
    assert len(blinding) == 3 * 2
    assert not (out_dir / BLINDING_FILE).exists()
    assert 'method_id' not in pd.read_csv(out_dir / TEMPLATE_FILE).columns
    with Image.open(out_dir / 'panel_000.png') as image:
        assert image.size == (4 * SIZE + 3 * TILE_GAP, SIZE)


def test_panel_tiles_follow_blinding_map(tmp_path):
    methods = synthetic_methods(3, 2)
    inputs = np.zeros((2, SIZE, SIZE))
    panels = build_panels(methods, inputs, inputs, tmp_path / 'p', tmp_path / 'b', seed=9)
    blinding = pd.read_csv(tmp_path / 'b' / BLINDING_FILE)
    lookup = dict(methods)
    for row in blinding.itertuples():
        panel = panels[row.image_index]
        np.testing.assert_array_equal(panel.tiles[row.position], lookup[row.method_id][row.image_index])


def test_blinding_map_must_live_elsewhere(tmp_path):
    inputs = np.zeros((1, SIZE, SIZE))
    with pytest.raises(DataError):
        build_panels(synthetic_methods(2, 1), inputs, inputs, tmp_path, tmp_path)


def test_render_panel_width():
    montage = render_panel([np.zeros((8, 10)), np.ones((8, 10)), np.full((8, 10), 0.5)])
    assert montage.mode == 'L'
    assert montage.size == (3 * 10 + 2 * TILE_GAP, 8)
    assert montage.getpixel((0, 0)) == 0
    assert montage.getpixel((10, 0)) == 255
    assert montage.getpixel((10 + TILE_GAP, 0)) == 255


def test_permutations_are_seeded():
    np.testing.assert_array_equal(panel_permutations(4, 20, seed=3), panel_permutations(4, 20, seed=3))
    for row in panel_permutations(4, 20, seed=3):
        assert sorted(row) == [0, 1, 2, 3]


def test_permutations_are_uniform():
    orders = panel_permutations(6, 10_000, seed=0)
    for position in range(6):
        frequencies = np.bincount(orders[:, position], minlength=6) / len(orders)
        np.testing.assert_allclose(frequencies, 1 / 6, atol=0.02)


def test_ingest_resolves_methods(tmp_path, panels_dirs):
    _, _, blinding_dir = panels_dirs
    path = write_scores(tmp_path / 'scores.csv', blinding_dir, lambda method, criterion: int(method == 'method_0'))
    scores = ingest_scores(path, blinding_dir / BLINDING_FILE)
    assert len(scores) == 2 * 3 * 2 * 3
    assert (scores['score'] == (scores['method_id'] == 'method_0').astype(int)).all()


def test_ingest_rejects_bad_rows(tmp_path, panels_dirs):
    _, _, blinding_dir = panels_dirs
    blinding = blinding_dir / BLINDING_FILE
    path = write_scores(tmp_path / 'scores.csv', blinding_dir, lambda method, criterion: 1)
    frame = pd.read_csv(path)

    invalid = frame.copy()
    invalid.loc[0, 'score'] = 3
    invalid.to_csv(tmp_path / 'invalid.csv', index=False)
    with pytest.raises(DataError) as e:
        ingest_scores(tmp_path / 'invalid.csv', blinding)
    assert e.value.code == 'invalid_score'

    pd.concat([frame, frame.iloc[:1]]).to_csv(tmp_path / 'duplicate.csv', index=False)
    with pytest.raises(DataError) as e:
        ingest_scores(tmp_path / 'duplicate.csv', blinding)
    assert e.value.code == 'duplicate_score'

    unknown = frame.copy()
    unknown.loc[0, 'panel_id'] = 'panel_999'
    unknown.to_csv(tmp_path / 'unknown.csv', index=False)
    with pytest.raises(DataError) as e:
        ingest_scores(tmp_path / 'unknown.csv', blinding)
    assert e.value.code == 'unknown_panel'

    position = frame.copy()
    position.loc[0, 'position'] = 7
    position.to_csv(tmp_path / 'position.csv', index=False)
    with pytest.raises(DataError) as e:
        ingest_scores(tmp_path / 'position.csv', blinding)
    assert e.value.code == 'unknown_position'


def test_aggregate_ignores_row_order(tmp_path, panels_dirs):
    _, _, blinding_dir = panels_dirs
    rng = np.random.default_rng(2)
    path = write_scores(tmp_path / 'scores.csv', blinding_dir, lambda method, criterion: int(rng.integers(2)))
    pd.read_csv(path).sample(frac=1.0, random_state=0).to_csv(tmp_path / 'shuffled.csv', index=False)
    blinding = blinding_dir / BLINDING_FILE
    a = aggregate(ingest_scores(path, blinding), n_resamples=200)
    b = aggregate(ingest_scores(tmp_path / 'shuffled.csv', blinding), n_resamples=200)
    pd.testing.assert_frame_equal(a['summary'], b['summary'])
    pd.testing.assert_frame_equal(a['tests'], b['tests'])


def test_unanimous_scores(tmp_path, panels_dirs):
    _, _, blinding_dir = panels_dirs
    path = write_scores(tmp_path / 'scores.csv', blinding_dir, lambda method, criterion: 1)
    result = aggregate(ingest_scores(path, blinding_dir / BLINDING_FILE), n_resamples=200)
    summary = result['summary']
    assert (summary['mean'] == 1.0).all()
    assert (summary['std'] == 0.0).all()
    assert (summary['n_panels'] == 3).all()
    assert (result['tests']['p'] == 1.0).all()


def test_consensus_averages_raters():
    scores = pd.DataFrame({'rater_id': ['a', 'b', 'a', 'b'], 'panel_id': ['p0'] * 4, 'position': [0, 0, 1, 1],
                           'criterion': ['identity'] * 4, 'score': [1, 0, 1, 1], 'method_id': ['x', 'x', 'y', 'y']})
    consensus = consensus_scores(scores)
    assert consensus.set_index('method_id')['score'].to_dict() == {'x': 0.5, 'y': 1.0}


def test_bootstrap_paired_test():
    a = np.array([0.9, 0.8, 0.7, 1.0, 0.95, 0.85])
    assert bootstrap_paired_test(a, a)['p'] >= 0.9
    b = a - np.array([0.3, 0.25, 0.35, 0.3, 0.28, 0.32])
    result = bootstrap_paired_test(a, b, n_resamples=2000, seed=1)
    assert result['mean_difference'] == pytest.approx(0.3)
    assert result['p'] < 0.05
    assert result == bootstrap_paired_test(a, b, n_resamples=2000, seed=1)
    with pytest.raises(MetricError):
        bootstrap_paired_test([1.0], [0.0])


def test_bootstrap_of_noise_is_not_significant():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=30), rng.normal(size=30)
    observed = stats.ttest_rel(a, b).pvalue
    result = bootstrap_paired_test(a, b, n_resamples=4000, seed=0)
    assert result['p'] == pytest.approx(observed, abs=0.1)


def test_point_biserial_equals_pearson():
    rng = np.random.default_rng(6)
    binary = rng.integers(0, 2, size=50)
    continuous = rng.normal(size=50) + binary
    assert point_biserial(binary, continuous) == pytest.approx(stats.pearsonr(binary, continuous)[0])


def test_point_biserial_errors():
    with pytest.raises(MetricError):
        point_biserial([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(MetricError):
        point_biserial([0, 1, 0], [0.5, 0.5, 0.5])
    with pytest.raises(MetricError):
        point_biserial([0, 2, 1], [0.1, 0.2, 0.3])


def test_aggregate_correlations(tmp_path, panels_dirs):
    _, _, blinding_dir = panels_dirs
    path = write_scores(tmp_path / 'scores.csv', blinding_dir, lambda method, criterion: int(method == 'method_0'))
    blinding = pd.read_csv(blinding_dir / BLINDING_FILE, dtype={'panel_id': str})
    metrics = blinding[['panel_id', 'method_id']].assign(iD=np.where(blinding['method_id'] == 'method_0', 0.9, 0.4))
    result = aggregate(ingest_scores(path, blinding_dir / BLINDING_FILE), metrics, n_resamples=200)
    correlations = result['correlations'].set_index('criterion')
    assert correlations.loc['identity', 'metric'] == 'iD'
    assert correlations.loc['identity', 'r'] == pytest.approx(1.0)
    assert 'healthiness' not in correlations.index


def test_realness_summary():
    truth = {'a': REAL_SOURCE, 'b': REAL_SOURCE, 'c': 'proposed', 'd': 'cyclegan'}
    calls = [{'rater_id': 'r', 'image_id': 'a', 'call': 'real'},
             {'rater_id': 'r', 'image_id': 'b', 'call': 'real'},
             {'rater_id': 'r', 'image_id': 'c', 'call': 'real'},
             {'rater_id': 's', 'image_id': 'c', 'call': 'fake'},
             {'rater_id': 'r', 'image_id': 'd', 'call': 'fake'}]
    summary = realness_summary(calls, truth)
    assert summary['source'].tolist() == [REAL_SOURCE, 'cyclegan', 'proposed']
    assert summary['realness'].tolist() == [1.0, 0.0, 0.5]
    assert summary['n_calls'].tolist() == [2, 1, 2]
    with pytest.raises(DataError):
        realness_summary([{'rater_id': 'r', 'image_id': 'z', 'call': 'real'}], truth)
    with pytest.raises(DataError):
        realness_summary([{'rater_id': 'r', 'image_id': 'a', 'call': 'maybe'}], truth)
