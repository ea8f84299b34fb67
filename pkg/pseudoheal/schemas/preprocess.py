"""
schemas/preprocess.py

This module defines the Pydantic models for intensity normalisation, slice
selection and subject splits.

Classes:
- PreprocessConfig: Percentile clipping, slice window and crop size.
- SplitConfig: Subject-level cross validation split.
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PreprocessConfig(BaseModel):
    """
    Schema for volume preprocessing.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    clip_percentile: float = Field(0.995, gt=0.0, le=1.0,
                        description="Intensity percentile V used for clipping and rescaling")
    slice_window: int = Field(60, ge=1, description="Number of middle axial slices kept")
    crop: tuple[int, int] = Field((208, 160), description="Center crop (H, W), zero padded if larger")
    histogram_bins: int = Field(64, ge=2, description="Uniform bins over [0, 1] for the JS check")


class SplitConfig(BaseModel):
    """
    Schema for the subject-level k-fold split.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    n_folds: int = Field(3, ge=2, description="Number of cross validation folds")
    fold: int = Field(0, ge=0, description="Fold used as the test split")
    val_fraction: float = Field(0.15, ge=0.0, lt=1.0,
                        description="Fraction of non-test subjects used for validation")
    mask_pool_fraction: float = Field(0.1, ge=0.0, lt=1.0,
                        description="Fraction of non-test subjects whose masks form the mask pool "
                                    "(prepared volumes only)")
    seed: int = Field(0, description="Seed of the subject shuffle")

    @model_validator(mode='after')
    def check_fold(self):
        if self.fold >= self.n_folds:
            raise ValueError(f"fold {self.fold} out of range for {self.n_folds} folds")
        return self
