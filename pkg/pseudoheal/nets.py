"""
nets.py

This module defines the networks: the generator G, segmentor S, reconstructor R
and the image and mask critics.

G and R are residual encoder-decoders with long skip connections between the
downsampling and upsampling paths; R takes the image and a mask as two input
channels. S is a U-net. All hidden convolutions use LeakyReLU; G, S and R end in
a sigmoid, the critics in an unbounded linear head.

Classes:
- ResidualBlock: Two 3x3 convolutions with an identity shortcut.
- GeneratorNet: Residual encoder-decoder, one input channel.
- ReconstructorNet: GeneratorNet taking (image, mask).
- SegmentorNet: U-net with a sigmoid head.
- CriticNet: Strided convolutions and a scalar linear head.

Functions:
- forward_g / forward_s / forward_r / forward_critic: Validated forward passes.
- build_nets: Builds the networks of a run from a NetConfig.
- count_parameters: Number of trainable parameters.
- build_bundle: Builds the networks of a proposed or baseline run.
"""

import logging

import torch
import torch.nn as nn

from .errors import ShapeError

logger = logging.getLogger(__name__)


def _norm(channels, enabled):
    return nn.InstanceNorm2d(channels, affine=True) if enabled else nn.Identity()


def _check_batch(x, channels, multiple, name):
    if x.dim() != 4 or x.shape[1] != channels or x.shape[2] % multiple or x.shape[3] % multiple:
        raise ShapeError(
            "shape_mismatch",
            f"{name} expects a (B, {channels}, H, W) batch with H and W divisible by {multiple}, "
            f"got {tuple(x.shape)}")


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity shortcut."""

    def __init__(self, channels, slope=0.2, instance_norm=False):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels, instance_norm),
            nn.LeakyReLU(slope),
            nn.Conv2d(channels, channels, 3, padding=1),
            _norm(channels, instance_norm),
        )
        self.act = nn.LeakyReLU(slope)

    def forward(self, x):
        return self.act(x + self.body(x))


class GeneratorNet(nn.Module):
    """
    Residual encoder-decoder with long skip connections.

    Each level halves the resolution with a strided convolution after a residual
    block; the decoder upsamples with transposed convolutions, concatenates the
    matching encoder features and merges them with a convolution and a residual
    block.
    """

    def __init__(self, in_channels=1, base_channels=32, levels=3, residual_blocks=2,
                 leaky_slope=0.2, instance_norm=False):
        super().__init__()
        self.in_channels = in_channels
        self.levels = levels
        widths = [base_channels * 2 ** i for i in range(levels + 1)]

        self.stem = nn.Sequential(nn.Conv2d(in_channels, widths[0], 3, padding=1), nn.LeakyReLU(leaky_slope))
        self.down = nn.ModuleList([
            nn.Sequential(
                ResidualBlock(widths[i], leaky_slope, instance_norm),
                nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1),
                _norm(widths[i + 1], instance_norm),
                nn.LeakyReLU(leaky_slope),
            ) for i in range(levels)
        ])
        self.bottleneck = nn.Sequential(*[
            ResidualBlock(widths[-1], leaky_slope, instance_norm) for _ in range(residual_blocks)
        ])
        self.up = nn.ModuleList([
            nn.Sequential(
                nn.ConvTranspose2d(widths[i + 1], widths[i], 4, stride=2, padding=1),
                _norm(widths[i], instance_norm),
                nn.LeakyReLU(leaky_slope),
            ) for i in reversed(range(levels))
        ])
        self.merge = nn.ModuleList([
            nn.Sequential(
                nn.Conv2d(2 * widths[i], widths[i], 3, padding=1),
                nn.LeakyReLU(leaky_slope),
                ResidualBlock(widths[i], leaky_slope, instance_norm),
            ) for i in reversed(range(levels))
        ])
        self.head = nn.Conv2d(widths[0], 1, 3, padding=1)

    def forward(self, x):
        _check_batch(x, self.in_channels, 2 ** self.levels, type(self).__name__)
        x = self.stem(x)
        skips = []
        for block in self.down:
            skips.append(x)
            x = block(x)
        x = self.bottleneck(x)
        for up, merge, skip in zip(self.up, self.merge, reversed(skips)):
            x = merge(torch.cat([up(x), skip], dim=1))
        return torch.sigmoid(self.head(x))


class ReconstructorNet(GeneratorNet):
    """GeneratorNet topology on the two-channel input (image, mask)."""

    def __init__(self, **kwargs):
        kwargs['in_channels'] = 2
        super().__init__(**kwargs)

    def forward(self, x, m):
        if x.shape != m.shape:
            raise ShapeError("shape_mismatch",
                             f"ReconstructorNet image {tuple(x.shape)} and mask {tuple(m.shape)} differ")
        return super().forward(torch.cat([x, m], dim=1))


class _DoubleConv(nn.Sequential):
    def __init__(self, in_channels, out_channels, slope, instance_norm):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            _norm(out_channels, instance_norm),
            nn.LeakyReLU(slope),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            _norm(out_channels, instance_norm),
            nn.LeakyReLU(slope),
        )


class SegmentorNet(nn.Module):
    """U-net with long skip connections and a sigmoid head."""

    def __init__(self, in_channels=1, base_channels=32, levels=3, leaky_slope=0.2, instance_norm=False):
        super().__init__()
        self.in_channels = in_channels
        self.levels = levels
        widths = [base_channels * 2 ** i for i in range(levels + 1)]

        self.encoders = nn.ModuleList(
            [_DoubleConv(in_channels, widths[0], leaky_slope, instance_norm)]
            + [_DoubleConv(widths[i], widths[i + 1], leaky_slope, instance_norm) for i in range(levels)])
        self.pool = nn.MaxPool2d(2)
        self.upsamplers = nn.ModuleList([
            nn.ConvTranspose2d(widths[i + 1], widths[i], 2, stride=2) for i in reversed(range(levels))
        ])
        self.decoders = nn.ModuleList([
            _DoubleConv(2 * widths[i], widths[i], leaky_slope, instance_norm) for i in reversed(range(levels))
        ])
        self.head = nn.Conv2d(widths[0], 1, 1)

    def forward(self, x):
        _check_batch(x, self.in_channels, 2 ** self.levels, type(self).__name__)
        skips = []
        for i, encoder in enumerate(self.encoders):
            if i > 0:
                x = self.pool(x)
            x = encoder(x)
            skips.append(x)
        skips.pop()
        for upsample, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = decoder(torch.cat([upsample(x), skip], dim=1))
        return torch.sigmoid(self.head(x))


class CriticNet(nn.Module):
    """
    Strided-convolution critic with a scalar linear head.

    No normalisation layers: the gradient penalty is computed per sample.
    """

    def __init__(self, image_size=(64, 64), in_channels=1, channels=32, levels=4, leaky_slope=0.2,
                 max_channels=256):
        super().__init__()
        self.in_channels = in_channels
        self.levels = levels
        self.image_size = tuple(image_size)
        layers = []
        width_in, width = in_channels, channels
        for _ in range(levels):
            layers += [nn.Conv2d(width_in, width, 4, stride=2, padding=1), nn.LeakyReLU(leaky_slope)]
            width_in, width = width, min(2 * width, max_channels)
        self.features = nn.Sequential(*layers)
        cells = (self.image_size[0] // 2 ** levels) * (self.image_size[1] // 2 ** levels)
        self.head = nn.Linear(width_in * cells, 1)

    def forward(self, x):
        _check_batch(x, self.in_channels, 2 ** self.levels, type(self).__name__)
        if tuple(x.shape[2:]) != self.image_size:
            raise ShapeError("shape_mismatch",
                             f"CriticNet expects {self.image_size} images, got {tuple(x.shape[2:])}")
        return self.head(self.features(x).flatten(1)).squeeze(1)


def forward_g(net, x):
    """Pseudo-healthy synthesis: (B, 1, H, W) -> (B, 1, H, W) in (0, 1)."""
    return net(x)


def forward_s(net, x):
    """Soft pathology masks: (B, 1, H, W) -> (B, 1, H, W) in (0, 1)."""
    return net(x)


def forward_r(net, x, m):
    """Reconstruction from an image and a mask batch of the same shape."""
    return net(x, m)


def forward_critic(net, x):
    """Critic scores: (B, 1, H, W) -> (B,)."""
    return net(x)


def count_parameters(net):
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def build_generator(net_cfg):
    return GeneratorNet(in_channels=1, base_channels=net_cfg.base_channels, levels=net_cfg.levels,
                        residual_blocks=net_cfg.residual_blocks, leaky_slope=net_cfg.leaky_slope,
                        instance_norm=net_cfg.instance_norm)


def build_reconstructor(net_cfg):
    return ReconstructorNet(base_channels=net_cfg.base_channels, levels=net_cfg.levels,
                            residual_blocks=net_cfg.residual_blocks, leaky_slope=net_cfg.leaky_slope,
                            instance_norm=net_cfg.instance_norm)


def build_segmentor(net_cfg):
    return SegmentorNet(base_channels=net_cfg.base_channels, levels=net_cfg.levels,
                        leaky_slope=net_cfg.leaky_slope, instance_norm=net_cfg.instance_norm)


def build_critic(net_cfg, image_size):
    return CriticNet(image_size=image_size, channels=net_cfg.critic_channels, levels=net_cfg.critic_levels,
                     leaky_slope=net_cfg.leaky_slope)


def build_nets(net_cfg, image_size, mask_critic=False):
    """
    Builds the networks of the proposed model.

    Args:
        net_cfg (NetConfig): Network sizes.
        image_size (tuple): (H, W) of the training slices.
        mask_critic (bool): Whether to build the mask critic D_m.

    Returns:
        dict: 'g', 's', 'r', 'd_x' and, when requested, 'd_m'.
    """
    multiple = 2 ** max(net_cfg.levels, net_cfg.critic_levels)
    if image_size[0] % multiple or image_size[1] % multiple:
        raise ShapeError("shape_mismatch",
                         f"Image size {tuple(image_size)} must be divisible by {multiple} for this NetConfig")
    nets = {
        'g': build_generator(net_cfg),
        's': build_segmentor(net_cfg),
        'r': build_reconstructor(net_cfg),
        'd_x': build_critic(net_cfg, image_size),
    }
    if mask_critic:
        nets['d_m'] = build_critic(net_cfg, image_size)
    for name, net in nets.items():
        logger.debug("Built %s with %d parameters", name, count_parameters(net))
    return nets


def build_bundle(train_cfg, image_size):
    """
    Builds the networks of a run, proposed model or baseline, as a ModelBundle.

    Args:
        train_cfg (TrainConfig): Run config; its baseline and ablation select the networks.
        image_size (tuple): (H, W) of the slices.

    Returns:
        ModelBundle: Freshly initialised networks with a config snapshot.
    """
    from .models.bundle import ModelBundle

    net_cfg = train_cfg.net
    snapshot = {'train': train_cfg.model_dump(), 'image_size': list(image_size)}
    if train_cfg.baseline == 'conditional_gan':
        return ModelBundle(g=build_generator(net_cfg), d_x=build_critic(net_cfg, image_size), config=snapshot)
    if train_cfg.baseline == 'cyclegan':
        return ModelBundle(g=build_generator(net_cfg), d_x=build_critic(net_cfg, image_size),
                           extra={'f': build_generator(net_cfg), 'd_p': build_critic(net_cfg, image_size)},
                           config=snapshot)
    nets = build_nets(net_cfg, image_size, mask_critic=train_cfg.uses_mask_pool)
    extra = {'d_p': build_critic(net_cfg, image_size)} if train_cfg.ablation == 'cycle_hp' else {}
    return ModelBundle(g=nets['g'], s=nets['s'], r=nets['r'], d_x=nets['d_x'], d_m=nets.get('d_m'),
                       extra=extra, config=snapshot)
