"""
models/bundle.py

This module defines the `ModelBundle` record holding every network of a run.

Classes:
- ModelBundle: Generator, segmentor, reconstructor, critics and training state.
"""

from dataclasses import dataclass, field

import torch

NET_NAMES = ('g', 's', 'r', 'd_x', 'd_m')


@dataclass
class ModelBundle:
    """
    Represents the networks of one training run.

    Attributes:
        g (nn.Module): Generator, pathological to pseudo-healthy.
        s (nn.Module | None): Segmentor. None for the baselines.
        r (nn.Module | None): Reconstructor. None for the baselines.
        d_x (nn.Module | None): Image critic.
        d_m (nn.Module | None): Mask critic, only built when masks are missing.
        extra (dict): Additional networks, e.g. the reverse generator of CycleGAN
            or the pathological-image critic of the Cycle H-P ablation.
        step (int): Generator updates performed so far.
        epoch (int): Completed epochs.
        config (dict): Snapshot of the TrainConfig that produced the bundle.
    """
    g: torch.nn.Module
    s: torch.nn.Module | None = None
    r: torch.nn.Module | None = None
    d_x: torch.nn.Module | None = None
    d_m: torch.nn.Module | None = None
    extra: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    config: dict = field(default_factory=dict)

    def networks(self):
        """
        Returns every constructed network by name.

        Returns:
            dict: name -> nn.Module, skipping absent networks.
        """
        nets = {name: getattr(self, name) for name in NET_NAMES if getattr(self, name) is not None}
        nets.update(self.extra)
        return nets

    def eval(self):
        for net in self.networks().values():
            net.eval()
        return self

    def train(self):
        for net in self.networks().values():
            net.train()
        return self

    def to(self, device):
        for net in self.networks().values():
            net.to(device)
        return self

    def to_dict(self):
        """
        Converts the bundle metadata to a dictionary.

        Returns:
            dict: Network names, step, epoch and config snapshot.
        """
        return {
            'networks': sorted(self.networks()),
            'step': self.step,
            'epoch': self.epoch,
            'config': self.config,
        }

    def __repr__(self):
        return f'<ModelBundle nets={sorted(self.networks())} step={self.step}>'
