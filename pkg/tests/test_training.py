"""
tests/test_training.py

Tests of the two-cycle training loop: settings, ablations, the critic schedule,
reproducibility, resuming and the NaN policy.
"""

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import torch

from pseudoheal.checkpoint import bundle_digest, load_bundle
from pseudoheal.errors import ConfigError, DataError, NumericalError
from pseudoheal.models.sample import Dataset
from pseudoheal.training import (DIAGNOSTIC_CHECKPOINT, FINAL_CHECKPOINT, LAST_CHECKPOINT, LOSS_FILE,
                                 PseudoHealthyTrainer, augment_masks, fit_masks_to_brain, to_batch, train)

BOOKKEEPING = {'epoch', 'step', 'critic_iters', 'total'}


def active_terms(log):
    return set(log.columns) - BOOKKEEPING


def test_paired_smoke(tmp_path, pathological_pool, healthy_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, None, make_train_cfg(critic_iters_warm=3), tmp_path)
    assert active_terms(result.log) == {'gan1', 'gan2', 'cc1', 'cc2', 'seg_paired'}
    assert len(result.log) == 4
    assert np.isfinite(result.log.drop(columns=['epoch']).to_numpy(dtype=float)).all()
    assert result.counters == {'critic_updates': 12, 'generator_updates': 4}
    assert result.bundle.d_m is None
    for name in (LOSS_FILE, LAST_CHECKPOINT, FINAL_CHECKPOINT):
        assert (tmp_path / name).is_file()
    written = pd.read_csv(tmp_path / LOSS_FILE)
    assert list(written.columns) == list(result.log.columns)
    assert load_bundle(tmp_path / FINAL_CHECKPOINT).step == 4


def test_critic_schedule(pathological_pool, healthy_pool, make_train_cfg):
    cfg = make_train_cfg(epochs=2, warm_epochs=1, critic_iters_warm=3, critic_iters=1)
    result = train(pathological_pool, healthy_pool, None, cfg)
    assert result.counters['critic_updates'] == 4 * 3 + 4 * 1
    assert result.log['critic_iters'].tolist() == [3] * 4 + [1] * 4


def test_semi_boundaries_match_pure_settings(pathological_pool, healthy_pool, mask_pool, make_train_cfg):
    def terms(**changes):
        return active_terms(train(pathological_pool, healthy_pool, mask_pool, make_train_cfg(**changes)).log)

    assert terms(setting='semi', ratio=0.0) == terms(setting='unpaired')
    assert terms(setting='semi', ratio=1.0) == terms(setting='paired')


def test_semi_routes_by_mask_availability(pathological_pool, healthy_pool, mask_pool, make_train_cfg):
    trainer = PseudoHealthyTrainer(pathological_pool, healthy_pool, mask_pool,
                                   make_train_cfg(setting='semi', ratio=0.5))
    assert int(trainer.has_mask.sum()) == 4
    assert float(trainer.m_p[~trainer.has_mask].sum()) == 0.0
    assert trainer.bundle.d_m is not None


def test_unpaired_never_uses_dice(pathological_pool, healthy_pool, mask_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, mask_pool, make_train_cfg(setting='unpaired'))
    assert 'seg_paired' not in result.log.columns
    assert 'seg_unpaired' in result.log.columns
    assert result.bundle.d_m is not None


def test_no_cycle_hh_drops_healthy_terms(pathological_pool, healthy_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, None, make_train_cfg(ablation='no_cycle_hh'))
    assert 'gan2' not in result.log.columns
    assert 'cc2' not in result.log.columns


def test_cycle_hp(pathological_pool, healthy_pool, mask_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, mask_pool, make_train_cfg(ablation='cycle_hp'))
    assert 'd_p' in result.bundle.extra
    assert np.isfinite(result.log[['gan2', 'cc2']].to_numpy()).all()


def test_cycle_hp_needs_pool(pathological_pool, healthy_pool, make_train_cfg):
    with pytest.raises(ConfigError):
        train(pathological_pool, healthy_pool, None, make_train_cfg(ablation='cycle_hp'))


def test_lsgan(pathological_pool, healthy_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, None, make_train_cfg(ablation='lsgan'))
    assert np.isfinite(result.log['total']).all()


def test_separate_updates(pathological_pool, healthy_pool, make_train_cfg):
    trainer = PseudoHealthyTrainer(pathological_pool, healthy_pool, None, make_train_cfg(joint_update=False))
    assert sorted(trainer.generator_optimizers) == ['g', 'r', 's']
    result = trainer.run()
    assert result.counters['generator_updates'] == 4


def test_mask_pool_required(pathological_pool, healthy_pool, make_train_cfg):
    with pytest.raises(ConfigError):
        train(pathological_pool, healthy_pool, None, make_train_cfg(setting='unpaired'))


def test_mask_pool_must_come_from_other_subjects(pathological_pool, healthy_pool, make_train_cfg):
    overlapping = Dataset(pathological_pool.samples, 'mask_pool', 'train')
    with pytest.raises(DataError):
        train(pathological_pool, healthy_pool, overlapping, make_train_cfg(setting='unpaired'))


def test_empty_pools(pathological_pool, healthy_pool, make_train_cfg):
    with pytest.raises(DataError):
        train(Dataset((), 'pathological_pool', 'train'), healthy_pool, None, make_train_cfg())
    with pytest.raises(DataError):
        train(pathological_pool, Dataset((), 'healthy_pool', 'train'), None, make_train_cfg())


def test_baseline_config_is_rejected(pathological_pool, healthy_pool, make_train_cfg):
    with pytest.raises(ConfigError):
        PseudoHealthyTrainer(pathological_pool, healthy_pool, None, make_train_cfg(baseline='cyclegan'))


def test_fixed_seed_reproduces_trajectory(pathological_pool, healthy_pool, make_train_cfg):
    cfg = make_train_cfg(epochs=13, warm_epochs=0, critic_iters=1)
    first = train(pathological_pool, healthy_pool, None, cfg)
    second = train(pathological_pool, healthy_pool, None, cfg)
    assert len(first.log) >= 50
    pd.testing.assert_frame_equal(first.log, second.log, check_exact=True)
    assert bundle_digest(first.bundle) == bundle_digest(second.bundle)


def test_resume_continues_trajectory(tmp_path, pathological_pool, healthy_pool, make_train_cfg):
    straight = train(pathological_pool, healthy_pool, None, make_train_cfg(epochs=2), tmp_path / 'straight')
    train(pathological_pool, healthy_pool, None, make_train_cfg(epochs=1), tmp_path / 'resumed')
    resumed = train(pathological_pool, healthy_pool, None, make_train_cfg(epochs=2), tmp_path / 'resumed')
    assert bundle_digest(resumed.bundle) == bundle_digest(straight.bundle)
    assert len(resumed.log) == len(straight.log)
    assert resumed.counters == straight.counters


def test_nan_aborts_with_diagnostic_checkpoint(tmp_path, pathological_pool, healthy_pool, make_train_cfg):
    broken = Dataset(tuple(replace(s, image=np.full_like(s.image, np.nan)) for s in pathological_pool),
                     'pathological_pool', 'train')
    with pytest.raises(NumericalError):
        train(broken, healthy_pool, None, make_train_cfg(), tmp_path)
    assert (tmp_path / DIAGNOSTIC_CHECKPOINT).is_file()
    assert not (tmp_path / FINAL_CHECKPOINT).exists()


def test_augment_masks_preserves_lesion_size(mask_pool):
    masks = to_batch(mask_pool.masks())
    augmented = augment_masks(masks, torch.Generator().manual_seed(0))
    assert augmented.shape == masks.shape
    torch.testing.assert_close(augmented.flatten(1).sum(1), masks.flatten(1).sum(1))


def test_fitted_masks_stay_inside_brain(mask_pool, healthy_pool):
    n = min(len(mask_pool), len(healthy_pool))
    masks = to_batch(mask_pool.masks()[:n])
    images = to_batch(healthy_pool.images()[:n])
    fitted = fit_masks_to_brain(masks, images)
    assert fitted.shape == masks.shape
    assert set(torch.unique(fitted).tolist()) <= {0.0, 1.0}
    assert float((fitted * (images <= 0.05)).sum()) == 0.0
    assert float(fitted.sum()) > 0


def test_train_dispatches_baselines(pathological_pool, healthy_pool, make_train_cfg):
    result = train(pathological_pool, healthy_pool, None, make_train_cfg(baseline='conditional_gan'))
    assert result.bundle.s is None and result.bundle.r is None
    assert active_terms(result.log) == {'gan1'}
