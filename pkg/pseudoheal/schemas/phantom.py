"""
schemas/phantom.py

This module defines the Pydantic model describing a synthetic brain phantom
dataset, used for validation of experiment configs.

Classes:
- PhantomSpec: Parameters of the procedural phantom generator.
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator


class PhantomSpec(BaseModel):
    """
    Parameters of the procedural phantom generator.

    Identical specs produce bit-identical samples: every sample draws from a
    random stream derived from `seed` and its own index.
    """
    model_config = ConfigDict(extra='forbid', frozen=True)

    seed: int = Field(0, description="Seed of the random stream")
    image_size: tuple[int, int] = Field((64, 64), description="Slice size (H, W) in pixels")
    lesion_probability: float = Field(0.5, ge=0.0, le=1.0,
                        description="Probability that a slice receives a lesion")
    lesion_intensity: float = Field(0.35, gt=0.0, le=1.0,
                        description="Additive brightness of a lesion")
    lesion_radius_range: tuple[int, int] = Field((3, 8),
                        description="Minimum and maximum lesion radius in pixels")
    deform: bool = Field(False, description="Apply a mass-effect deformation to every slice")
    deform_magnitude: float = Field(3.0, ge=0.0,
                        description="Peak displacement of the deformation in pixels")
    subject_offset: int = Field(0, ge=0,
                        description="First subject id, keeps separately generated pools disjoint")

    @model_validator(mode='after')
    def check_dimensions(self):
        height, width = self.image_size
        if height < 16 or width < 16:
            raise ValueError(f"image_size must be at least 16x16, got {self.image_size}")
        low, high = self.lesion_radius_range
        if low < 1:
            raise ValueError("lesion_radius_range minimum must be at least 1")
        if low > high:
            raise ValueError("lesion_radius_range minimum exceeds its maximum")
        if high > min(height, width) / 4:
            raise ValueError(
                f"lesion_radius_range maximum {high} exceeds min(H, W)/4 = {min(height, width) / 4}")
        return self
