"""
schemas/experiment.py

This module defines the Pydantic model of a complete experiment document and the
loader used by every command.

Classes:
- EvalOptions: Metric thresholds and the auxiliary networks' training budget.
- StudyOptions: Human evaluation settings.
- PathsConfig: Output locations.
- ExperimentConfig: Union of all sections.

Functions:
- load_experiment_config: Reads and validates a JSON config, raising ConfigError.
"""

import json
import logging

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field
from pydantic import ValidationError as PydanticValidationError

from config import Config
from ..errors import ConfigError
from .phantom import PhantomSpec
from .preprocess import PreprocessConfig, SplitConfig
from .train import Ablation, TrainConfig

logger = logging.getLogger(__name__)


class EvalOptions(BaseModel):
    """
    Schema for evaluation options.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    judge_threshold: float = Field(0.5, gt=0.0, lt=1.0, description="Binarisation of judge output")
    judge_epochs: int = Field(20, ge=1, description="Judge segmentor training epochs")
    judge_finetune_epochs: int = Field(3, ge=0, description="Judge fine-tuning epochs on validation")
    dec_epochs: int = Field(15, ge=1, description="Deformation classifier training epochs")
    dec_finetune_epochs: int = Field(2, ge=0, description="Classifier fine-tuning epochs on validation")
    diff_threshold: float = Field(0.1, gt=0.0, description="Difference map threshold")
    canny_sigma: float = Field(1.0, gt=0.0, description="Canny smoothing sigma")
    canny_low: float = Field(0.1, ge=0.0, description="Canny lower hysteresis threshold")
    canny_high: float = Field(0.2, ge=0.0, description="Canny upper hysteresis threshold")
    ms_ssim_window: int = Field(11, ge=3, description="MS-SSIM Gaussian window width")
    iterate_k: int = Field(5, ge=1, description="Passes of repeated pseudo-healthy synthesis")
    shift_px: int = Field(8, ge=1, description="Mask shift of the one-to-many diagnostic")
    sweep_ratios: list[float] = Field([0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                        description="Paired-sample ratios of the semi-supervised sweep")
    ablations: list[Ablation] = Field(['none', 'no_cycle_hh', 'cycle_hp', 'lsgan'],
                        description="Variants trained by the ablate command")
    baselines: list[Literal['conditional_gan', 'cyclegan']] = Field(['conditional_gan', 'cyclegan'],
                        description="Baselines trained by the ablate command")
    seed: int = Field(0, description="Seed of the auxiliary networks")


class StudyOptions(BaseModel):
    """
    Schema for human evaluation tooling.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    n_panels: int = Field(50, ge=1, description="Slices shown to raters")
    bootstrap_resamples: int = Field(10_000, ge=100, description="Resamples of the paired bootstrap test")
    seed: int = Field(0, description="Seed of panel permutations and bootstrap draws")


class PathsConfig(BaseModel):
    """
    Schema for output locations.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    data_dir: str = Field(Config.DATA_DIR, description="Dataset directory")
    runs_dir: str = Field(Config.RUNS_DIR, description="Parent of run directories")
    report: str = Field(f'{Config.RUNS_DIR}/report.csv', description="Summary report path")


class ExperimentConfig(BaseModel):
    """
    Schema for a complete experiment document. Unknown keys are rejected.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    n_subjects: int = Field(400, ge=4, description="Phantom slices generated")
    n_mask_pool: int = Field(60, ge=1, description="Pathological slices reserved as the mask pool")
    n_deformed: int = Field(120, ge=0, description="Deformed healthy slices for the DeC classifier")
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    split: SplitConfig = Field(default_factory=SplitConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalOptions = Field(default_factory=EvalOptions)
    study: StudyOptions = Field(default_factory=StudyOptions)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    def with_train(self, **changes):
        """Returns a copy whose train section has the given fields replaced."""
        try:
            train = TrainConfig.model_validate({**self.train.model_dump(), **changes})
        except PydanticValidationError as e:
            first = e.errors()[0]
            raise ConfigError("invalid_config", f"train.{_field_path(first)}: {first['msg']}") from e
        return self.model_copy(update={'train': train})

    def with_seed(self, seed):
        """Returns a copy whose training and phantom seeds are replaced."""
        phantom = PhantomSpec.model_validate({**self.phantom.model_dump(), 'seed': seed})
        return self.with_train(seed=seed).model_copy(update={'phantom': phantom})


def _field_path(error):
    return '.'.join(str(part) for part in error['loc']) or '<root>'


def validate_experiment_config(document):
    """
    Validates a decoded JSON document.

    Raises:
        ConfigError: naming the dotted path of the first offending field.
    """
    try:
        return ExperimentConfig.model_validate(document)
    except PydanticValidationError as e:
        first = e.errors()[0]
        path = _field_path(first)
        logger.error("Config validation failed at %s: %s", path, first['msg'])
        raise ConfigError("invalid_config", f"{path}: {first['msg']}") from e


def load_experiment_config(path):
    """
    Reads and validates an experiment config file.

    Args:
        path (str | Path): JSON document.

    Returns:
        ExperimentConfig: The validated config.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config_not_found", f"Config file {path} does not exist")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("invalid_json", f"{path}: {e}") from e
    return validate_experiment_config(document)
