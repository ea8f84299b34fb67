"""
baselines.py

This module trains the comparison methods with the generator and critic
topologies of the proposed model.

Neither baseline reads masks: both consume `Dataset.images()` only.

Classes:
- ConditionalGANTrainer: G and D_x with the image adversarial term only.
- CycleGANTrainer: G (P->H), F (H->P), D_x and D_p with two-direction cycle losses.

Functions:
- train_baseline: Validates the data and runs one of the trainers.
"""

import logging

import torch

from .errors import ConfigError, DataError
from .losses import total_loss
from .training import AdversarialTrainer, _Stream, to_batch

logger = logging.getLogger(__name__)


class _BaselineTrainer(AdversarialTrainer):
    """Two image streams, one per domain."""

    def __init__(self, dataset_p, dataset_h, cfg, run_dir=None):
        if len(dataset_p) == 0 or len(dataset_h) == 0:
            raise DataError("empty_pool", "Training needs nonempty pathological and healthy pools")
        super().__init__(cfg, dataset_p.samples[0].shape, run_dir)
        self.x_p = to_batch(dataset_p.images())
        self.x_h = to_batch(dataset_h.images())

    def batch_size(self):
        return min(self.cfg.batch_size, len(self.x_p), len(self.x_h))

    def steps_per_epoch(self):
        return max(1, len(self.x_p) // self.batch_size())

    def setup_data(self, epoch_seed):
        b = self.batch_size()
        self.p_stream = _Stream((self.x_p,), b, torch.Generator().manual_seed(epoch_seed * 8))
        self.h_stream = _Stream((self.x_h,), b, torch.Generator().manual_seed(epoch_seed * 8 + 1))


class ConditionalGANTrainer(_BaselineTrainer):

    def __init__(self, dataset_p, dataset_h, cfg, run_dir=None):
        super().__init__(dataset_p, dataset_h, cfg, run_dir)
        self.critic_optimizers = {'d_x': self.adam(self.bundle.d_x)}
        self.generator_optimizers = {'g': self.adam(self.bundle.g)}

    def critic_step(self):
        b = self.bundle
        x_p, = self.p_stream.next()
        x_h, = self.h_stream.next()
        with torch.no_grad():
            fake_h = b.g(x_p)
        self.step_critic('d_x', self.cfg.weights.lambda1 * self.adversarial_critic_loss(b.d_x, x_h, fake_h))

    def generator_step(self):
        b = self.bundle
        x_p, = self.p_stream.next()

        def objective():
            return total_loss('unpaired', {'gan1': self.adversarial_generator_loss(b.d_x, b.g(x_p))},
                              self.cfg.weights)

        return self.step_generators(objective)


class CycleGANTrainer(_BaselineTrainer):

    def __init__(self, dataset_p, dataset_h, cfg, run_dir=None):
        super().__init__(dataset_p, dataset_h, cfg, run_dir)
        b = self.bundle
        self.critic_optimizers = {'d_x': self.adam(b.d_x), 'd_p': self.adam(b.extra['d_p'])}
        if cfg.joint_update:
            self.generator_optimizers = {'gf': self.adam(b.g, b.extra['f'])}
        else:
            self.generator_optimizers = {'g': self.adam(b.g), 'f': self.adam(b.extra['f'])}

    def critic_step(self):
        b, w = self.bundle, self.cfg.weights
        x_p, = self.p_stream.next()
        x_h, = self.h_stream.next()
        with torch.no_grad():
            fake_h, fake_p = b.g(x_p), b.extra['f'](x_h)
        self.step_critic('d_x', w.lambda1 * self.adversarial_critic_loss(b.d_x, x_h, fake_h))
        self.step_critic('d_p', w.lambda2 * self.adversarial_critic_loss(b.extra['d_p'], x_p, fake_p))

    def generator_step(self):
        b = self.bundle
        g, f = b.g, b.extra['f']
        x_p, = self.p_stream.next()
        x_h, = self.h_stream.next()

        def objective():
            fake_h, fake_p = g(x_p), f(x_h)
            components = {
                'gan1': self.adversarial_generator_loss(b.d_x, fake_h),
                'gan2': self.adversarial_generator_loss(b.extra['d_p'], fake_p),
                'cc1': (f(fake_h) - x_p).abs().mean(),
                'cc2': (g(fake_p) - x_h).abs().mean(),
            }
            return total_loss('unpaired', components, self.cfg.weights)

        return self.step_generators(objective)


TRAINERS = {
    'conditional_gan': ConditionalGANTrainer,
    'cyclegan': CycleGANTrainer,
}


def train_baseline(kind, dataset_p, dataset_h, cfg, run_dir=None):
    """
    Trains a baseline.

    Args:
        kind (str): 'conditional_gan' or 'cyclegan'.
        dataset_p (Dataset): Pathological training slices.
        dataset_h (Dataset): Healthy training slices.
        cfg (TrainConfig): Run config; its baseline field is set to `kind`.
        run_dir (str | Path | None): Output directory.

    Returns:
        TrainResult: Bundle, loss log and counters.
    """
    if kind not in TRAINERS:
        raise ConfigError("unknown_baseline", f"Unknown baseline {kind}")
    if cfg.baseline != kind:
        cfg = cfg.model_copy(update={'baseline': kind, 'ablation': 'none'})
    logger.info("Training %s baseline on %d pathological and %d healthy slices (%d subjects)",
                kind, len(dataset_p), len(dataset_h), len(dataset_p.subject_ids()))
    return TRAINERS[kind](dataset_p, dataset_h, cfg, run_dir).run()
