"""
tests/test_evaluation.py

Tests of the quantitative metrics and diagnostics with hand-built judges,
classifiers and networks.
"""

import numpy as np
import pytest
import torch

from scipy import stats

from pseudoheal.errors import MetricError, ShapeError
from pseudoheal.evaluation import (DecClassifier, JudgeSegmentor, compare_reports, compare_with_reference,
                                   dec_score, diff_map_segmentation, evaluate_bundle, healthiness,
                                   healthy_resynthesis, identity, iterate_generator, mask_permutation_diagnostic,
                                   mask_shift_diagnostic, pseudo_disease, reconstruction_degradation,
                                   segmentor_dice, shift_columns, train_dec_classifier, train_judge)
from pseudoheal.models.bundle import ModelBundle
from pseudoheal.models.report import MetricReport
from pseudoheal.nets import build_bundle
from pseudoheal.schemas import EvalOptions

LESION = 1.0
BACKGROUND = 0.5


def brightness_judge():
    """Judge that labels every pixel brighter than the background."""
    return JudgeSegmentor(net=lambda x: (x > 0.9).float(), threshold=0.5, trained=True)


def images_with_lesions(areas, size=32):
    images = np.full((len(areas), size, size), BACKGROUND, dtype=np.float32)
    masks = np.zeros_like(images, dtype=np.uint8)
    for i, area in enumerate(areas):
        images[i].ravel()[:area] = LESION
        masks[i].ravel()[:area] = 1
    return images, masks


def constant_classifier(logit):
    return DecClassifier(net=lambda x: torch.full((x.shape[0],), float(logit)), opts=EvalOptions(), trained=True)


def identity_net(x, m=None):
    return x.clone()


def test_healthiness_is_one_without_judged_lesions():
    inputs, _ = images_with_lesions([8, 8])
    synth = np.full_like(inputs, BACKGROUND)
    assert healthiness(synth, inputs, brightness_judge()) == 1.0


def test_healthiness_is_zero_for_unchanged_images():
    inputs, _ = images_with_lesions([8, 6])
    assert healthiness(inputs, inputs, brightness_judge()) == 0.0


def test_healthiness_pixel_count_oracle():
    inputs, _ = images_with_lesions([8, 8])
    synth, _ = images_with_lesions([4, 4])
    assert healthiness(synth, inputs, brightness_judge()) == pytest.approx(0.5)


def test_healthiness_is_a_ratio_of_means():
    inputs, _ = images_with_lesions([8, 2])
    synth, _ = images_with_lesions([2, 2])
    assert healthiness(synth, inputs, brightness_judge()) == pytest.approx(1 - 2 / 5)


def test_healthiness_errors():
    healthy = np.full((2, 32, 32), BACKGROUND, dtype=np.float32)
    with pytest.raises(MetricError):
        healthiness(healthy, healthy, brightness_judge())
    with pytest.raises(MetricError):
        healthiness(healthy, healthy, JudgeSegmentor(net=lambda x: x))
    with pytest.raises(ShapeError):
        healthiness(healthy[:1], healthy, brightness_judge())


def test_identity_of_identical_images():
    images, masks = images_with_lesions([20, 30])
    images = images + np.random.default_rng(0).uniform(0, 0.3, images.shape).astype(np.float32)
    assert identity(images, images, masks) == pytest.approx(1.0, abs=1e-6)


def test_identity_ignores_the_masked_region():
    rng = np.random.default_rng(1)
    images = rng.uniform(size=(2, 32, 32)).astype(np.float32)
    masks = np.zeros((2, 32, 32), dtype=np.uint8)
    masks[:, 10:18, 10:18] = 1
    changed = np.where(masks == 1, rng.uniform(size=images.shape), images).astype(np.float32)
    assert identity(images, changed, masks) == pytest.approx(1.0, abs=1e-6)


def test_identity_is_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(2, 32, 32)), rng.uniform(size=(2, 32, 32))
    masks = np.zeros((2, 32, 32))
    assert abs(identity(a, b, masks) - identity(b, a, masks)) < 1e-9
    assert 0.0 <= identity(a, b, masks) <= 1.0


def test_dec_score():
    images = np.random.default_rng(3).uniform(size=(3, 32, 32))
    assert dec_score(images, constant_classifier(60.0)) == pytest.approx(1.0)
    assert dec_score(images, constant_classifier(0.0)) == pytest.approx(0.5)
    with pytest.raises(MetricError):
        dec_score(images, DecClassifier(net=lambda x: x, opts=EvalOptions()))


def test_diff_map_of_unchanged_images():
    images, masks = images_with_lesions([10])
    predicted, dice = diff_map_segmentation(images, images, masks)
    assert predicted.sum() == 0
    assert dice[0] == pytest.approx(0.0, abs=1e-6)


def test_diff_map_recovers_zeroed_lesion():
    images, masks = images_with_lesions([12, 7])
    synth = np.where(masks == 1, 0.0, images).astype(np.float32)
    predicted, dice = diff_map_segmentation(images, synth, masks)
    np.testing.assert_array_equal(predicted, masks)
    np.testing.assert_allclose(dice, 1.0, atol=1e-6)


def test_diff_map_matches_elementwise_threshold():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(3, 32, 32)).astype(np.float32)
    y = (x + rng.normal(scale=0.1, size=x.shape)).astype(np.float32)
    predicted, dice = diff_map_segmentation(x, y, threshold=0.1)
    assert dice is None
    np.testing.assert_array_equal(predicted, (np.abs(x - y) > 0.1).astype(np.uint8))


def test_segmentor_dice_oracles():
    gt = np.zeros((1, 4, 4), dtype=np.uint8)
    gt[0, 0, :] = 1
    half = torch.zeros(1, 1, 4, 4)
    half[0, 0, 0, :2] = 1
    images = np.zeros((1, 4, 4), dtype=np.float32)
    assert segmentor_dice(lambda x: torch.from_numpy(gt).float()[:, None], images, gt) == 1.0
    assert segmentor_dice(lambda x: torch.zeros_like(x), images, gt) == 0.0
    assert segmentor_dice(lambda x: half, images, gt) == pytest.approx(2 * 2 / (2 + 4))


def test_pseudo_disease(make_train_cfg, healthy_pool):
    bundle = build_bundle(make_train_cfg(), (32, 32)).eval()
    masks = np.zeros((4, 32, 32), dtype=np.uint8)
    masks[:, 12:18, 12:18] = 1
    images, iou = pseudo_disease(bundle.r, healthy_pool.images()[:4], masks, bundle.s)
    assert images.shape == (4, 32, 32)
    assert iou.shape == (4,)
    assert np.all((iou >= 0) & (iou <= 1))
    images, iou = pseudo_disease(bundle.r, healthy_pool.images()[:4], masks)
    assert iou is None


def test_identity_generator_has_constant_trajectory():
    inputs, masks = images_with_lesions([8, 8])
    trajectory = iterate_generator(identity_net, inputs, masks, brightness_judge(), k=3)
    assert len(trajectory) == 3
    for i_d, h in trajectory:
        assert i_d == pytest.approx(1.0, abs=1e-6)
        assert h == 0.0


def test_single_iteration_equals_standard_metrics():
    inputs, masks = images_with_lesions([8, 8])
    g = lambda x: torch.where(x > 0.9, torch.full_like(x, BACKGROUND), x)
    (i_d, h), = iterate_generator(g, inputs, masks, brightness_judge(), k=1)
    synth = g(torch.from_numpy(inputs))
    assert i_d == pytest.approx(identity(inputs, synth, masks))
    assert h == pytest.approx(healthiness(synth, inputs, brightness_judge()))
    assert h == 1.0


def test_mask_diagnostics(make_train_cfg, pathological_pool):
    torch.manual_seed(0)
    bundle = build_bundle(make_train_cfg(), (32, 32)).eval()
    x_p = pathological_pool.images()
    shift = mask_shift_diagnostic(bundle, x_p, shift_px=8)
    assert set(shift) == {'iou_shifted', 'iou_original', 'fraction'}
    assert len(shift['iou_shifted']) == len(shift['iou_original'])
    permutation = mask_permutation_diagnostic(bundle, x_p, seed=0)
    assert permutation['l1_matched'].shape == (len(x_p),)
    assert permutation['l1_permuted'].shape == (len(x_p),)


def test_mask_permutation_with_identical_masks_changes_nothing(make_train_cfg):
    bundle = build_bundle(make_train_cfg(), (32, 32)).eval()
    x_p = np.repeat(np.random.default_rng(5).uniform(size=(1, 32, 32)).astype(np.float32), 3, axis=0)
    result = mask_permutation_diagnostic(bundle, x_p, seed=1)
    np.testing.assert_allclose(result['l1_matched'], result['l1_permuted'], atol=1e-6)


def test_shift_columns_fills_vacated_columns_with_zeros():
    m = torch.zeros(1, 1, 4, 12)
    m[..., 9:] = 1
    np.testing.assert_array_equal(shift_columns(m, 8).numpy(), np.zeros((1, 1, 4, 12)))
    left = shift_columns(m, -3)
    assert left[..., 6:9].eq(1).all()
    assert left[..., :6].eq(0).all() and left[..., 9:].eq(0).all()
    np.testing.assert_array_equal(shift_columns(m, 0).numpy(), m.numpy())


def test_mask_shift_translates_lesions_near_the_border():
    images = np.full((2, 32, 32), BACKGROUND, dtype=np.float32)
    images[:, 10:16, 20:28] = LESION
    translated = torch.zeros(2, 1, 32, 32, dtype=torch.bool)
    translated[:, :, 10:16, 28:] = True
    bundle = ModelBundle(
        g=lambda x: torch.where(x > 0.9, torch.full_like(x, BACKGROUND), x),
        s=lambda x: (x > 0.9).float(),
        r=lambda x, m: torch.where(translated[:len(x)], torch.full_like(x, LESION), x),
    )
    result = mask_shift_diagnostic(bundle, images, shift_px=8)
    np.testing.assert_array_equal(result['iou_shifted'], [1.0, 1.0])
    np.testing.assert_array_equal(result['iou_original'], [0.0, 0.0])
    assert result['fraction'] == 1.0


def test_reconstruction_degradation(make_train_cfg, pathological_pool):
    x_p, m_p = pathological_pool.images(), pathological_pool.masks()
    proposed = build_bundle(make_train_cfg(), (32, 32)).eval()
    assert reconstruction_degradation(proposed, x_p, m_p).shape == (len(x_p),)
    cyclegan = build_bundle(make_train_cfg(baseline='cyclegan'), (32, 32)).eval()
    assert reconstruction_degradation(cyclegan, x_p, m_p).shape == (len(x_p),)
    conditional = build_bundle(make_train_cfg(baseline='conditional_gan'), (32, 32)).eval()
    with pytest.raises(MetricError):
        reconstruction_degradation(conditional, x_p, m_p)


def test_healthy_resynthesis_of_identity_generator(healthy_pool):
    assert healthy_resynthesis(identity_net, healthy_pool.images()) == pytest.approx(1.0, abs=1e-6)


def test_evaluate_bundle(make_train_cfg, pathological_pool, healthy_pool):
    torch.manual_seed(0)
    bundle = build_bundle(make_train_cfg(), (32, 32)).eval()
    judge = JudgeSegmentor(net=lambda x: x, threshold=0.5, trained=True)
    opts = EvalOptions(iterate_k=2)
    report = evaluate_bundle(bundle, pathological_pool, judge, constant_classifier(0.0), opts,
                             test_h=healthy_pool, run='fresh')
    assert report.n_samples == len(pathological_pool)
    assert report.DeC == pytest.approx(0.5)
    assert 0.0 <= report.iD <= 1.0
    assert 0.0 <= report.dice_segmentor <= 1.0
    for key in ('mask_shift_fraction', 'mask_permutation_l1_matched', 'mask_permutation_l1_permuted',
                'mask_permutation_iou', 'reconstruction_degradation', 'healthy_identity', 'cycle_hh_residual',
                'iter1_iD', 'iter2_h'):
        assert key in report.extras
    frame = report.to_frame()
    assert frame['row'].iloc[-2:].tolist() == ['mean', 'std']
    assert frame.iloc[-2]['iD'] == pytest.approx(report.iD)


def test_evaluate_baseline_has_no_segmentor_dice(make_train_cfg, pathological_pool):
    bundle = build_bundle(make_train_cfg(baseline='conditional_gan'), (32, 32)).eval()
    judge = JudgeSegmentor(net=lambda x: x, threshold=0.5, trained=True)
    report = evaluate_bundle(bundle, pathological_pool, judge, constant_classifier(0.0), EvalOptions(iterate_k=1))
    assert np.isnan(report.dice_segmentor)
    assert 'mask_shift_fraction' not in report.extras
    assert 'mask_permutation_iou' not in report.extras


def test_compare_reports():
    a = MetricReport(per_sample={'iD': np.array([0.9, 0.8, 0.85, 0.95])})
    b = MetricReport(per_sample={'iD': np.array([0.7, 0.75, 0.8, 0.7])})
    result = compare_reports(a, b, 'iD')
    assert result['mean_difference'] == pytest.approx(0.1375)
    expected = stats.ttest_rel(a.per_sample['iD'], b.per_sample['iD'])
    assert result['t'] == pytest.approx(expected.statistic)
    assert result['p'] == pytest.approx(expected.pvalue)
    with pytest.raises(MetricError):
        compare_reports(a, MetricReport(per_sample={'iD': np.array([0.5])}), 'iD')


def test_compare_with_reference_skips_missing_metrics():
    reference = MetricReport(per_sample={'iD': np.array([0.7, 0.75, 0.8, 0.7]), 'h': np.array([])})
    variant = MetricReport(per_sample={'iD': np.array([0.9, 0.8, 0.85, 0.95]), 'h': np.array([0.5, 0.6, 0.4, 0.7])})
    frame = compare_with_reference(reference, {'no_cycle_hh': variant})
    assert frame['variant'].tolist() == ['no_cycle_hh']
    assert frame['metric'].tolist() == ['iD']
    assert frame.loc[0, 'mean_difference'] == pytest.approx(0.1375)
    assert compare_with_reference(reference, {}).empty


def test_auxiliary_networks_train(net_cfg, pathological_pool, healthy_pool):
    opts = EvalOptions(judge_epochs=1, judge_finetune_epochs=1, dec_epochs=1, dec_finetune_epochs=1)
    images = np.concatenate([pathological_pool.images(), healthy_pool.images()])
    masks = np.concatenate([pathological_pool.masks(), np.zeros_like(healthy_pool.masks())])
    judge = train_judge(images, masks, images[:4], masks[:4], net_cfg, opts)
    assert judge.trained
    assert judge.count(images).shape == (len(images),)

    deformed = healthy_pool.images()[:, ::-1].copy()
    clf = train_dec_classifier(healthy_pool.images(), deformed, healthy_pool.images()[:2], deformed[:2],
                               net_cfg, opts)
    probabilities = clf.predict_proba(healthy_pool.images())
    assert probabilities.shape == (len(healthy_pool),)
    assert np.all((probabilities >= 0) & (probabilities <= 1))
    with pytest.raises(MetricError):
        train_dec_classifier(healthy_pool.images(), deformed[:0], deformed[:0], deformed[:0], net_cfg, opts)


def test_evaluate_bundle_with_a_blind_judge(make_train_cfg, pathological_pool):
    bundle = build_bundle(make_train_cfg(), (32, 32)).eval()
    blind = JudgeSegmentor(net=lambda x: torch.zeros_like(x), trained=True)
    report = evaluate_bundle(bundle, pathological_pool, blind, constant_classifier(0.0), EvalOptions(iterate_k=2))
    assert np.isnan(report.h)
    assert 'iter1_h' not in report.extras
    with pytest.raises(MetricError):
        evaluate_bundle(bundle, pathological_pool, JudgeSegmentor(net=lambda x: x), constant_classifier(0.0),
                        EvalOptions(iterate_k=1))
