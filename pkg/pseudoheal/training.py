"""
training.py

This module trains the proposed model with its two adversarial cycles.

Cycle P-H turns a pathological slice into a pseudo-healthy slice and a mask and
reconstructs the input from them; Cycle H-H feeds a healthy slice with an empty
mask through R and back through G and S. Critics are updated `critic_iters`
times (`critic_iters_warm` during the first `warm_epochs`) per update of G, S
and R on the combined objective.

Data order, interpolation weights and mask augmentation are drawn from
generators reseeded at every epoch, so a run resumed from an epoch checkpoint
continues the uninterrupted trajectory.

Classes:
- TrainResult: Trained bundle, loss log and counters.
- AdversarialTrainer: Epoch loop, logging, checkpointing and the NaN policy.
- PseudoHealthyTrainer: The proposed model, its settings and ablations.

Functions:
- train: Trains the proposed model.
- seed_everything / configure_torch: Reproducibility setup.
- augment_masks / fit_masks_to_brain: Mask pool handling.
"""

import itertools
import logging
import random

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, TensorDataset

from config import Config
from .checkpoint import load_training_state, save_bundle
from .errors import ConfigError, DataError, NumericalError
from .losses import (critic_loss, cycle_hh_loss, cycle_ph_loss, dice_loss, generator_adversarial_loss,
                     lsgan_critic_loss, lsgan_generator_loss, total_loss)
from .nets import build_bundle

logger = logging.getLogger(__name__)

LOSS_FILE = 'losses.csv'
LAST_CHECKPOINT = 'checkpoints/last.pt'
FINAL_CHECKPOINT = 'checkpoints/final.pt'
DIAGNOSTIC_CHECKPOINT = 'checkpoints/diagnostic.pt'


def configure_torch():
    torch.set_num_threads(Config.NUM_THREADS)
    torch.use_deterministic_algorithms(Config.DETERMINISTIC, warn_only=True)


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def to_batch(array):
    """(N, H, W) array -> float32 (N, 1, H, W) tensor."""
    return torch.from_numpy(np.asarray(array, dtype=np.float32)).unsqueeze(1)


class _Stream:
    """Endless shuffled batches over tensors; the order is fixed by `generator`."""

    def __init__(self, tensors, batch_size, generator):
        self.loader = DataLoader(TensorDataset(*tensors), batch_size=batch_size, shuffle=True,
                                 generator=generator, drop_last=True)
        self._batches = iter(self.loader)

    def next(self):
        try:
            return next(self._batches)
        except StopIteration:
            self._batches = iter(self.loader)
            return next(self._batches)


def augment_masks(masks, generator):
    """
    Random flips and 90-degree rotations, drawn per mask.

    Rotations by 90 and 270 degrees are only used for square masks.
    """
    out = []
    square = masks.shape[-1] == masks.shape[-2]
    for mask in masks:
        flips, turns = torch.randint(0, 4, (2,), generator=generator).tolist()
        if flips & 1:
            mask = mask.flip(-1)
        if flips & 2:
            mask = mask.flip(-2)
        mask = torch.rot90(mask, turns if square else 2 * (turns % 2), dims=(-2, -1))
        out.append(mask)
    return torch.stack(out)


def _erode(support, size=5):
    return 1 - F.max_pool2d(1 - support, size, stride=1, padding=size // 2)


def fit_masks_to_brain(masks, images, threshold=0.05):
    """
    Places pool masks inside the brain of healthy slices.

    Each mask is shrunk (nearest neighbour) when its bounding box exceeds 80% of
    the brain's, moved so that its box lies inside the brain's box, and
    intersected with the eroded brain support.

    Args:
        masks (torch.Tensor): (B, 1, H, W) binary masks.
        images (torch.Tensor): (B, 1, H, W) healthy slices.

    Returns:
        torch.Tensor: (B, 1, H, W) binary masks.
    """
    brains = _erode((images > threshold).to(masks.dtype))
    fitted = torch.zeros_like(masks)
    for i in range(masks.shape[0]):
        mask, brain = masks[i, 0], brains[i, 0]
        if mask.sum() == 0 or brain.sum() == 0:
            continue
        rows, cols = torch.nonzero(mask, as_tuple=True)
        b_rows, b_cols = torch.nonzero(brain, as_tuple=True)
        crop = mask[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        box_h, box_w = int(b_rows.max() - b_rows.min() + 1), int(b_cols.max() - b_cols.min() + 1)
        scale = min(1.0, 0.8 * box_h / crop.shape[0], 0.8 * box_w / crop.shape[1])
        if scale < 1.0:
            size = (max(1, int(crop.shape[0] * scale)), max(1, int(crop.shape[1] * scale)))
            crop = F.interpolate(crop[None, None], size=size, mode='nearest')[0, 0]
        top = int(rows.min()) + (int(rows.max() - rows.min() + 1) - crop.shape[0]) // 2
        left = int(cols.min()) + (int(cols.max() - cols.min() + 1) - crop.shape[1]) // 2
        top = min(max(top, int(b_rows.min())), int(b_rows.max()) + 1 - crop.shape[0])
        left = min(max(left, int(b_cols.min())), int(b_cols.max()) + 1 - crop.shape[1])
        fitted[i, 0, top:top + crop.shape[0], left:left + crop.shape[1]] = crop
        fitted[i, 0] *= brain
    return fitted


@dataclass
class TrainResult:
    """
    Represents the outcome of a training run.

    Attributes:
        bundle (ModelBundle): Trained networks.
        log (pd.DataFrame): One row per generator update with every active loss term.
        counters (dict): Update counters.
    """
    bundle: object
    log: pd.DataFrame
    counters: dict = field(default_factory=dict)


class AdversarialTrainer:
    """
    Epoch loop shared by the proposed model and the baselines.

    Subclasses build their streams in `setup_data`, update critics in
    `critic_step` and return a LossBreakdown from `generator_step`.
    """

    def __init__(self, cfg, image_size, run_dir=None):
        configure_torch()
        seed_everything(cfg.seed)
        self.cfg = cfg
        self.image_size = tuple(image_size)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.bundle = build_bundle(cfg, self.image_size)
        self.counters = {'critic_updates': 0, 'generator_updates': 0}
        self.rows = []
        self.eps_generator = torch.Generator()
        self.aug_generator = torch.Generator()
        self.critic_optimizers = {}
        self.generator_optimizers = {}

    def adam(self, *nets):
        params = itertools.chain.from_iterable(net.parameters() for net in nets)
        return torch.optim.Adam(params, lr=self.cfg.lr, betas=(self.cfg.beta1, self.cfg.beta2))

    @property
    def optimizers(self):
        named = {f'critic_{k}': v for k, v in self.critic_optimizers.items()}
        named.update({f'generator_{k}': v for k, v in self.generator_optimizers.items()})
        return named

    def batch_size(self):
        raise NotImplementedError

    def steps_per_epoch(self):
        raise NotImplementedError

    def setup_data(self, epoch_seed):
        raise NotImplementedError

    def critic_step(self):
        raise NotImplementedError

    def generator_step(self):
        raise NotImplementedError

    def critic_schedule(self, epoch):
        return self.cfg.critic_iters_warm if epoch < self.cfg.warm_epochs else self.cfg.critic_iters

    def adversarial_critic_loss(self, critic, real, fake):
        if self.cfg.ablation == 'lsgan':
            return lsgan_critic_loss(critic, real, fake)
        return critic_loss(critic, real, fake, self.cfg.weights.lambda_gp, self.eps_generator)

    def adversarial_generator_loss(self, critic, fake):
        if self.cfg.ablation == 'lsgan':
            return lsgan_generator_loss(critic, fake)
        return generator_adversarial_loss(critic, fake)

    def step_critic(self, name, loss):
        if not torch.isfinite(loss.detach()):
            raise NumericalError("non_finite_loss", f"Critic {name} loss is not finite at step {self.bundle.step}")
        optimizer = self.critic_optimizers[name]
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

    def step_generators(self, objective):
        """
        Minimises `objective()` over the generator-side networks.

        With a joint update one optimiser steps on one evaluation; otherwise each
        optimiser steps in turn on a fresh evaluation.
        """
        breakdown = None
        for optimizer in self.generator_optimizers.values():
            for net in self.bundle.networks().values():
                net.zero_grad(set_to_none=True)
            breakdown = objective()
            breakdown.total.backward()
            optimizer.step()
        return breakdown

    def _reseed(self, epoch):
        epoch_seed = self.cfg.seed * 1_000_003 + epoch
        self.eps_generator.manual_seed(epoch_seed + 1)
        self.aug_generator.manual_seed(epoch_seed + 2)
        torch.manual_seed(epoch_seed + 3)
        self.setup_data(epoch_seed)

    def _write_log(self):
        log = pd.DataFrame(self.rows)
        if self.run_dir is not None and not log.empty:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            log.to_csv(self.run_dir / LOSS_FILE, index=False)
        return log

    def _checkpoint(self, relative):
        if self.run_dir is not None:
            save_bundle(self.bundle, self.run_dir / relative, self.optimizers, self.counters)

    def _resume(self):
        last = self.run_dir / LAST_CHECKPOINT if self.run_dir is not None else None
        if last is None or not last.is_file():
            return 0
        self.counters.update(load_training_state(last, self.bundle, self.optimizers))
        if (self.run_dir / LOSS_FILE).is_file():
            log = pd.read_csv(self.run_dir / LOSS_FILE)
            self.rows = log[log['step'] < self.bundle.step].to_dict('records')
        logger.info("Resuming from %s at epoch %d (step %d)", last, self.bundle.epoch, self.bundle.step)
        return self.bundle.epoch

    def run(self):
        """
        Trains for the configured number of epochs.

        Returns:
            TrainResult: Bundle, loss log and counters.

        Raises:
            NumericalError: On a non-finite loss, after writing a diagnostic checkpoint.
        """
        start = self._resume()
        self.bundle.train()
        try:
            for epoch in range(start, self.cfg.epochs):
                self._reseed(epoch)
                n_critic = self.critic_schedule(epoch)
                for _ in range(self.steps_per_epoch()):
                    for _ in range(n_critic):
                        self.critic_step()
                        self.counters['critic_updates'] += 1
                    breakdown = self.generator_step()
                    self.counters['generator_updates'] += 1
                    self.rows.append({'epoch': epoch, 'step': self.bundle.step, 'critic_iters': n_critic,
                                      **breakdown.as_row()})
                    logger.debug("step %d: %s", self.bundle.step, breakdown.terms)
                    self.bundle.step += 1
                self.bundle.epoch = epoch + 1
                log = self._write_log()
                means = log[log['epoch'] == epoch].drop(columns=['epoch', 'step', 'critic_iters']).mean()
                logger.info("epoch %d/%d critic_iters=%d %s", epoch + 1, self.cfg.epochs, n_critic,
                            ' '.join(f'{k}={v:.4f}' for k, v in means.items()))
                self._checkpoint(LAST_CHECKPOINT)
        except NumericalError as e:
            logger.error("Aborting: %s", e.description)
            self._write_log()
            self._checkpoint(DIAGNOSTIC_CHECKPOINT)
            raise
        self._checkpoint(FINAL_CHECKPOINT)
        return TrainResult(bundle=self.bundle.eval(), log=self._write_log(), counters=dict(self.counters))


class PseudoHealthyTrainer(AdversarialTrainer):
    """Trains G, S and R with Cycle P-H and Cycle H-H (or an ablation)."""

    def __init__(self, dataset_p, dataset_h, mask_pool, cfg, run_dir=None):
        if cfg.baseline != 'none':
            raise ConfigError("baseline_config", "Use train_baseline for baseline runs")
        if len(dataset_p) == 0 or len(dataset_h) == 0:
            raise DataError("empty_pool", "Training needs nonempty pathological and healthy pools")
        needs_pool = cfg.uses_mask_pool or cfg.ablation == 'cycle_hp'
        if needs_pool and (mask_pool is None or len(mask_pool) == 0):
            raise ConfigError("empty_mask_pool", "This setting needs a nonempty mask pool")
        if needs_pool:
            shared = dataset_p.subject_ids() & mask_pool.subject_ids()
            if shared:
                raise DataError("mask_pool_overlap",
                                f"Mask pool shares subjects with the training set: {sorted(shared)[:5]}")
        super().__init__(cfg, dataset_p.samples[0].shape, run_dir)

        self.x_p = to_batch(dataset_p.images())
        self.x_h = to_batch(dataset_h.images())
        masks = to_batch(dataset_p.masks())
        n_paired = int(round(cfg.paired_fraction * len(dataset_p)))
        order = np.random.default_rng(cfg.seed).permutation(len(dataset_p))
        self.has_mask = torch.zeros(len(dataset_p), dtype=torch.bool)
        self.has_mask[torch.from_numpy(order[:n_paired])] = True
        # masks of unpaired slices never reach the objective
        self.m_p = masks * self.has_mask.reshape(-1, 1, 1, 1)
        self.pool = to_batch(mask_pool.masks()) if needs_pool else None
        logger.info("Training %s setting with %d/%d paired slices, ablation=%s",
                    cfg.setting, n_paired, len(dataset_p), cfg.ablation)

        b = self.bundle
        if cfg.joint_update:
            self.generator_optimizers = {'gsr': self.adam(b.g, b.s, b.r)}
        else:
            self.generator_optimizers = {'g': self.adam(b.g), 's': self.adam(b.s), 'r': self.adam(b.r)}
        self.critic_optimizers = {'d_x': self.adam(b.d_x)}
        if b.d_m is not None:
            self.critic_optimizers['d_m'] = self.adam(b.d_m)
        if 'd_p' in b.extra:
            self.critic_optimizers['d_p'] = self.adam(b.extra['d_p'])

    def batch_size(self):
        sizes = [self.cfg.batch_size, len(self.x_p), len(self.x_h)]
        if self.pool is not None:
            sizes.append(len(self.pool))
        return min(sizes)

    def steps_per_epoch(self):
        return max(1, len(self.x_p) // self.batch_size())

    def setup_data(self, epoch_seed):
        b = self.batch_size()
        seeds = [torch.Generator().manual_seed(epoch_seed * 8 + k) for k in range(4)]
        self.p_stream = _Stream((self.x_p, self.m_p, self.has_mask), b, seeds[0])
        self.h_stream = _Stream((self.x_h,), b, seeds[1])
        self.h2_stream = _Stream((self.x_h,), b, seeds[2])
        self.pool_stream = _Stream((self.pool,), b, seeds[3]) if self.pool is not None else None

    def _pool_masks(self):
        masks, = self.pool_stream.next()
        return augment_masks(masks, self.aug_generator) if self.cfg.mask_augment else masks

    @property
    def cycle(self):
        return {'none': 'hh', 'lsgan': 'hh', 'no_cycle_hh': None, 'cycle_hp': 'hp'}[self.cfg.ablation]

    def critic_step(self):
        b, w = self.bundle, self.cfg.weights
        x_p, _, has_mask = self.p_stream.next()
        x_h1, = self.h_stream.next()
        x_h2, = self.h2_stream.next()

        with torch.no_grad():
            fake_h = b.g(x_p)
        loss = w.lambda1 * self.adversarial_critic_loss(b.d_x, x_h1, fake_h)
        if self.cycle == 'hh':
            with torch.no_grad():
                fake_hh = b.r(x_h2, torch.zeros_like(x_h2))
            loss = loss + w.lambda2 * self.adversarial_critic_loss(b.d_x, x_h1, fake_hh)
        self.step_critic('d_x', loss)

        unpaired = ~has_mask
        if b.d_m is not None and unpaired.any():
            with torch.no_grad():
                seg = b.s(x_p[unpaired])
            real = self._pool_masks()[:seg.shape[0]]
            self.step_critic('d_m', w.lambda5_unpaired * self.adversarial_critic_loss(b.d_m, real, seg))

        if self.cycle == 'hp':
            masks = fit_masks_to_brain(self._pool_masks(), x_h2)
            with torch.no_grad():
                fake_p = b.r(x_h2, masks)
            d_p = b.extra['d_p']
            self.step_critic('d_p', w.lambda2 * self.adversarial_critic_loss(d_p, x_p, fake_p))

    def generator_step(self):
        b = self.bundle
        x_p, m_p, has_mask = self.p_stream.next()
        x_h, = self.h_stream.next()
        hp_masks = fit_masks_to_brain(self._pool_masks(), x_h) if self.cycle == 'hp' else None

        def objective():
            m_tilde = b.s(x_p)
            components = {
                'gan1': self.adversarial_generator_loss(b.d_x, b.g(x_p)),
                'cc1': cycle_ph_loss(b.r, b.g, b.s, x_p),
            }
            if has_mask.any():
                components['seg_paired'] = dice_loss(m_tilde[has_mask], m_p[has_mask])
            if b.d_m is not None and (~has_mask).any():
                components['seg_unpaired'] = self.adversarial_generator_loss(b.d_m, m_tilde[~has_mask])
            if self.cycle == 'hh':
                zeros = torch.zeros_like(x_h)
                components['gan2'] = self.adversarial_generator_loss(b.d_x, b.r(x_h, zeros))
                components['cc2'] = cycle_hh_loss(b.g, b.s, b.r, x_h, zeros)
            elif self.cycle == 'hp':
                fake_p = b.r(x_h, hp_masks)
                components['gan2'] = self.adversarial_generator_loss(b.extra['d_p'], fake_p)
                components['cc2'] = (b.g(fake_p) - x_h).abs().mean() + (b.s(fake_p) - hp_masks).abs().mean()
            return total_loss(self.cfg.setting, components, self.cfg.weights)

        return self.step_generators(objective)


def train(dataset_p, dataset_h, mask_pool, cfg, run_dir=None):
    """
    Trains the proposed model.

    Args:
        dataset_p (Dataset): Pathological training slices.
        dataset_h (Dataset): Healthy training slices.
        mask_pool (Dataset | None): Masks of non-training subjects; required when
            some slices are trained without their masks and for Cycle H-P.
        cfg (TrainConfig): Run config.
        run_dir (str | Path | None): Where to write losses.csv and checkpoints;
            an existing `checkpoints/last.pt` there is resumed.

    Returns:
        TrainResult: Bundle, loss log and counters.
    """
    if cfg.baseline != 'none':
        from .baselines import train_baseline
        return train_baseline(cfg.baseline, dataset_p, dataset_h, cfg, run_dir)
    return PseudoHealthyTrainer(dataset_p, dataset_h, mask_pool, cfg, run_dir).run()
