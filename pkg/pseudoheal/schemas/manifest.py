"""
schemas/manifest.py

This module defines the Pydantic models for the on-disk dataset manifest.

Classes:
- ManifestEntry: One slice with its metadata and payload file names.
- Manifest: The `manifest.json` document.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

DomainTag = Literal['healthy_pool', 'pathological_pool', 'mask_pool', 'deformed_pool']
Split = Literal['train', 'val', 'test']


class ManifestEntry(BaseModel):
    """
    Schema for one slice in the manifest.
    """
    model_config = ConfigDict(extra='forbid')

    id: int = Field(..., ge=0, description="Sample index within the dataset directory")
    subject_id: int = Field(..., description="Subject the slice belongs to")
    shape: tuple[int, int] = Field(..., description="Slice shape (H, W)")
    label: Literal['healthy', 'pathological'] = Field(..., description="Slice label")
    deformed: bool = Field(False, description="Slice carries a mass-effect deformation")
    split: Split = Field(..., description="Cross validation split")
    pool: DomainTag = Field(..., description="Domain pool")
    image_file: str = Field(..., description="Raw little-endian float32 image")
    mask_file: str = Field(..., description="Raw uint8 mask")


class Manifest(BaseModel):
    """
    Schema for `manifest.json`.
    """
    model_config = ConfigDict(extra='forbid')

    format_version: int = Field(1, description="Manifest format version")
    count: int = Field(..., ge=0, description="Number of samples")
    samples: list[ManifestEntry] = Field(default_factory=list)
