"""
schemas/__init__.py

Pydantic models used to validate configs and on-disk documents.
"""

from .experiment import (EvalOptions, ExperimentConfig, PathsConfig, StudyOptions,
                         load_experiment_config, validate_experiment_config)
from .manifest import Manifest, ManifestEntry
from .phantom import PhantomSpec
from .preprocess import PreprocessConfig, SplitConfig
from .study import CRITERIA, RaterScore, RealnessCall
from .train import LossWeights, NetConfig, TrainConfig
