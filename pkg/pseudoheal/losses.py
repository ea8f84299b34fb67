"""
losses.py

This module defines the training objectives.

The adversarial objectives are written as max-min games; here every player
gets its own minimisation target:

- critic:    mean D(fake) - mean D(real) + gradient penalty
             (minimising it makes the critic ascend E[D(real) - D(fake)])
- generator: -mean D(fake)

Functions:
- gradient_penalty: lambda_gp * mean (||grad D(interpolate)||_2 - 1)^2.
- critic_loss / generator_adversarial_loss: WGAN-GP building blocks.
- lsgan_critic_loss / lsgan_generator_loss: Least-squares variants.
- wgan_image_losses: Pseudo-healthy images against real healthy images.
- wgan_reconstructor_losses: Reconstructed healthy images against real healthy images.
- mask_adversarial_losses: Segmented masks against masks of other subjects.
- cycle_ph_loss / cycle_hh_loss: Cycle-consistency losses.
- dice_loss: Soft Dice loss.
- total_loss: Weighted sum for the paired, unpaired and semi-supervised settings.
"""

import logging

from dataclasses import dataclass, field

import torch

from .errors import ConfigError, NumericalError, ShapeError, ValidationError

logger = logging.getLogger(__name__)

DICE_SMOOTH = 1e-6

# term -> weight attribute of LossWeights
TERM_WEIGHTS = {
    'gan1': 'lambda1',
    'gan2': 'lambda2',
    'cc1': 'lambda3',
    'cc2': 'lambda4',
    'seg_paired': 'lambda5_paired',
    'seg_unpaired': 'lambda5_unpaired',
}


def _check_pair(real, fake):
    if real.shape != fake.shape:
        raise ShapeError("shape_mismatch", f"Real batch {tuple(real.shape)} and fake batch {tuple(fake.shape)} differ")
    if real.shape[0] == 0:
        raise ShapeError("empty_batch", "Adversarial losses need a nonempty batch")


def _scores(critic, x):
    return critic(x).reshape(x.shape[0], -1).mean(dim=1)


def gradient_penalty(critic, real, fake, lambda_gp=10.0, generator=None, eps=None):
    """
    Gradient penalty on random interpolates of real and fake samples.

    Args:
        critic (callable): Maps a batch to one score per sample.
        real, fake (torch.Tensor): Batches of equal shape.
        lambda_gp (float): Penalty weight.
        generator (torch.Generator | None): Source of the per-sample eps ~ U[0, 1].
        eps (torch.Tensor | None): Explicit interpolation weights of shape (B,).

    Returns:
        torch.Tensor: lambda_gp * mean_b (||grad_x D(x_b)||_2 - 1)^2 with
        x_b = eps_b * real_b + (1 - eps_b) * fake_b.

    Raises:
        NumericalError: If the critic output does not depend differentiably on its input.
    """
    _check_pair(real, fake)
    if eps is None:
        eps = torch.rand(real.shape[0], generator=generator, dtype=real.dtype).to(real.device)
    eps = eps.reshape(-1, *([1] * (real.dim() - 1)))
    interpolates = (eps * real.detach() + (1 - eps) * fake.detach()).requires_grad_(True)
    scores = _scores(critic, interpolates)
    if not scores.requires_grad:
        raise NumericalError("non_differentiable_critic", "Critic output has no gradient w.r.t. its input")
    gradients, = torch.autograd.grad(outputs=scores, inputs=interpolates,
                                     grad_outputs=torch.ones_like(scores),
                                     create_graph=True, retain_graph=True, allow_unused=True)
    if gradients is None:
        gradients = torch.zeros_like(interpolates)
    norms = gradients.reshape(gradients.shape[0], -1).norm(2, dim=1)
    return lambda_gp * ((norms - 1) ** 2).mean()


def critic_loss(critic, real, fake, lambda_gp=10.0, generator=None):
    """WGAN-GP critic target. `fake` is detached."""
    _check_pair(real, fake)
    fake = fake.detach()
    wasserstein = _scores(critic, fake).mean() - _scores(critic, real).mean()
    return wasserstein + gradient_penalty(critic, real, fake, lambda_gp, generator)


def generator_adversarial_loss(critic, fake):
    """WGAN generator target: -mean D(fake)."""
    return -_scores(critic, fake).mean()


def lsgan_critic_loss(critic, real, fake):
    """Least-squares critic target with labels real -> 1, fake -> 0."""
    _check_pair(real, fake)
    return 0.5 * ((_scores(critic, real) - 1) ** 2).mean() + 0.5 * (_scores(critic, fake.detach()) ** 2).mean()


def lsgan_generator_loss(critic, fake):
    """Least-squares generator target: fakes pushed towards label 1."""
    return 0.5 * ((_scores(critic, fake) - 1) ** 2).mean()


def wgan_image_losses(d_x, g, x_p, x_h, lambda_gp=10.0, generator=None):
    """
    Adversarial losses of the pseudo-healthy images G(x_p) against healthy x_h.

    Returns:
        tuple: (critic_loss, gen_loss).
    """
    fake = g(x_p)
    return (critic_loss(d_x, x_h, fake, lambda_gp, generator),
            generator_adversarial_loss(d_x, fake))


def wgan_reconstructor_losses(d_x, r, x_h1, x_h2, m_h2, lambda_gp=10.0, generator=None):
    """
    Adversarial losses of R(x_h2, m_h2) against a second healthy batch x_h1.

    Raises:
        ValidationError: If m_h2 is not all zero.
    """
    if torch.any(m_h2 != 0):
        raise ValidationError("nonzero_healthy_mask", "The healthy cycle takes all-zero masks")
    fake = r(x_h2, m_h2)
    return (critic_loss(d_x, x_h1, fake, lambda_gp, generator),
            generator_adversarial_loss(d_x, fake))


def mask_adversarial_losses(d_m, s, x_p1, m_p2, lambda_gp=10.0, generator=None):
    """
    Adversarial losses of segmented masks S(x_p1) against real masks m_p2 of
    other subjects.

    Raises:
        ConfigError: If the mask pool batch is empty.
    """
    if m_p2 is None or m_p2.numel() == 0:
        raise ConfigError("empty_mask_pool", "The unpaired setting needs a nonempty mask pool")
    fake = s(x_p1)
    return (critic_loss(d_m, m_p2, fake, lambda_gp, generator),
            generator_adversarial_loss(d_m, fake))


def cycle_ph_loss(r, g, s, x_p):
    """Mean l1 between R(G(x_p), S(x_p)) and x_p."""
    return (r(g(x_p), s(x_p)) - x_p).abs().mean()


def cycle_hh_loss(g, s, r, x_h, m_h):
    """Mean l1 of G(R(x_h, m_h)) against x_h plus mean l1 of S(R(x_h, m_h)) against m_h."""
    fake_healthy = r(x_h, m_h)
    return (g(fake_healthy) - x_h).abs().mean() + (s(fake_healthy) - m_h).abs().mean()


def dice_loss(pred, target, smooth=DICE_SMOOTH):
    """
    Soft Dice loss, averaged over the batch.

    Per sample: 1 - 2 sum(pred * target) / (sum(pred) + sum(target) + smooth).
    """
    if pred.shape != target.shape:
        raise ShapeError("shape_mismatch", f"Prediction {tuple(pred.shape)} and target {tuple(target.shape)} differ")
    pred = pred.reshape(pred.shape[0], -1)
    target = target.reshape(target.shape[0], -1).to(pred.dtype)
    intersection = (pred * target).sum(dim=1)
    denominator = pred.sum(dim=1) + target.sum(dim=1) + smooth
    return (1 - 2 * intersection / denominator).mean()


@dataclass
class LossBreakdown:
    """
    Represents a combined objective.

    Attributes:
        total (torch.Tensor): Weighted sum, differentiable.
        terms (dict): term name -> unweighted float value.
    """
    total: torch.Tensor
    terms: dict = field(default_factory=dict)

    def as_row(self):
        return {**self.terms, 'total': float(self.total.detach())}


def total_loss(setting, components, weights):
    """
    Combines component losses with the weights of the setting.

    Args:
        setting (str): 'paired', 'unpaired' or 'semi'.
        components (dict): term name -> scalar tensor or float; terms that are
            absent or None are inactive.
        weights (LossWeights): Term weights.

    Returns:
        LossBreakdown: Total and per-term values.
    """
    allowed = {
        'paired': {'gan1', 'gan2', 'cc1', 'cc2', 'seg_paired'},
        'unpaired': {'gan1', 'gan2', 'cc1', 'cc2', 'seg_unpaired'},
        'semi': set(TERM_WEIGHTS),
    }
    if setting not in allowed:
        raise ConfigError("unknown_setting", f"Unknown setting {setting}")
    unknown = {k for k, v in components.items() if v is not None} - allowed[setting]
    if unknown:
        raise ConfigError("unexpected_terms", f"Terms {sorted(unknown)} are not part of the {setting} objective")

    total = torch.zeros(())
    terms = {}
    for name, attribute in TERM_WEIGHTS.items():
        value = components.get(name)
        if value is None:
            continue
        value = value if torch.is_tensor(value) else torch.tensor(float(value))
        total = total.to(value.device, value.dtype) + getattr(weights, attribute) * value
        terms[name] = float(value.detach())
    if not torch.isfinite(total.detach()):
        raise NumericalError("non_finite_loss", f"Combined loss is not finite: {terms}")
    return LossBreakdown(total=total, terms=terms)
