"""
schemas/train.py

This module defines the Pydantic models for network topology, loss weights and
the training schedule.

Classes:
- NetConfig: Width and depth of the generator, segmentor, reconstructor and critics.
- LossWeights: Weights of the combined paired/unpaired objectives.
- TrainConfig: Setting, schedule, optimiser, ablation and baseline selection.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

Setting = Literal['paired', 'unpaired', 'semi']
Ablation = Literal['none', 'no_cycle_hh', 'cycle_hp', 'lsgan']
Baseline = Literal['none', 'conditional_gan', 'cyclegan']


class NetConfig(BaseModel):
    """
    Schema for network sizes. Defaults are scaled for 64x64 slices.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    base_channels: int = Field(32, ge=1, description="Channels of the first encoder level")
    levels: int = Field(3, ge=1, description="Down/up sampling levels of G, S and R")
    residual_blocks: int = Field(2, ge=0, description="Residual blocks at the bottleneck of G and R")
    critic_channels: int = Field(32, ge=1, description="Channels of the first critic layer")
    critic_levels: int = Field(4, ge=1, description="Strided convolutions in each critic")
    leaky_slope: float = Field(0.2, ge=0.0, lt=1.0, description="LeakyReLU negative slope")
    instance_norm: bool = Field(False, description="Instance normalisation in G, S and R")


class LossWeights(BaseModel):
    """
    Schema for the weights of the combined objectives.

    `lambda5_paired` weighs the Dice term, `lambda5_unpaired` the adversarial
    mask term; a semi-supervised run uses both.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    lambda1: float = Field(2.0, ge=0.0, description="Image adversarial term, pathological cycle")
    lambda2: float = Field(1.0, ge=0.0, description="Image adversarial term, healthy cycle")
    lambda3: float = Field(20.0, ge=0.0, description="Cycle consistency, pathological cycle")
    lambda4: float = Field(10.0, ge=0.0, description="Cycle consistency, healthy cycle")
    lambda5_paired: float = Field(10.0, ge=0.0, description="Supervised Dice segmentation term")
    lambda5_unpaired: float = Field(1.0, ge=0.0, description="Adversarial mask term")
    lambda_gp: float = Field(10.0, ge=0.0, description="Gradient penalty weight")


class TrainConfig(BaseModel):
    """
    Schema for a training run.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    setting: Setting = Field('paired', description="Availability of ground-truth masks")
    ratio: float = Field(1.0, ge=0.0, le=1.0,
                        description="Fraction of pathological slices with masks (semi setting only)")
    epochs: int = Field(300, ge=1, description="Training epochs")
    batch_size: int = Field(4, ge=1, description="Batch size")
    critic_iters_warm: int = Field(50, ge=1, description="Critic updates per generator update during warm-up")
    warm_epochs: int = Field(20, ge=0, description="Epochs using the warm-up critic schedule")
    critic_iters: int = Field(5, ge=1, description="Critic updates per generator update afterwards")
    lr: float = Field(1e-4, gt=0.0, description="Adam learning rate")
    beta1: float = Field(0.5, ge=0.0, lt=1.0, description="Adam beta1")
    beta2: float = Field(0.999, ge=0.0, lt=1.0, description="Adam beta2")
    seed: int = Field(0, description="Seed of weights, data order and interpolation draws")
    ablation: Ablation = Field('none', description="Ablation variant")
    baseline: Baseline = Field('none', description="Baseline method instead of the proposed model")
    joint_update: bool = Field(True,
                        description="Update G, S and R with one optimiser step; false alternates per net")
    mask_augment: bool = Field(True, description="Random flips and rotations of pool masks")
    weights: LossWeights = Field(default_factory=LossWeights)
    net: NetConfig = Field(default_factory=NetConfig)

    @model_validator(mode='after')
    def check_combination(self):
        if self.baseline != 'none' and self.ablation != 'none':
            raise ValueError("a baseline run cannot also be an ablation")
        return self

    @property
    def uses_mask_pool(self):
        """True when some pathological slices are trained without their masks."""
        if self.baseline != 'none':
            return False
        if self.setting == 'unpaired':
            return True
        return self.setting == 'semi' and self.ratio < 1.0

    @property
    def paired_fraction(self):
        """Fraction of pathological slices routed to the supervised Dice loss."""
        return {'paired': 1.0, 'unpaired': 0.0}.get(self.setting, self.ratio)
