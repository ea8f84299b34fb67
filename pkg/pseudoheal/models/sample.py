"""
models/sample.py

This module defines the in-memory records for slices and datasets.

Classes:
- Label: Slice label, healthy or pathological.
- PhantomSample: One 2D slice with its pathology mask and metadata.
- Dataset: An immutable collection of slices from one split and domain pool.

In these classes are included methods for conversion to dictionaries, stacking
into arrays and string representation.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ValidationError

DOMAIN_TAGS = ('healthy_pool', 'pathological_pool', 'mask_pool', 'deformed_pool')
SPLITS = ('train', 'val', 'test')


class Label(str, Enum):
    """Slice label. A slice is healthy iff its mask is empty."""
    HEALTHY = 'healthy'
    PATHOLOGICAL = 'pathological'


@dataclass(eq=False)
class PhantomSample:
    """
    Represents one slice.

    Attributes:
        image (np.ndarray): float32 (H, W) image in [0, 1].
        mask (np.ndarray): uint8 (H, W) binary pathology mask.
        label (Label): healthy iff the mask is empty.
        subject_id (int): Subject the slice belongs to.
        deformed (bool): Whether a mass-effect deformation was applied.
        lesion_center (tuple | None): (row, col) of the lesion disk, phantoms only.
        lesion_radius (float | None): Radius of the lesion disk, phantoms only.
        latent_healthy (np.ndarray | None): The pre-lesion image. Kept for oracle
            tests; never written to disk.
    """
    image: np.ndarray
    mask: np.ndarray
    label: Label
    subject_id: int
    deformed: bool = False
    lesion_center: tuple | None = None
    lesion_radius: float | None = None
    latent_healthy: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.label = Label(self.label)
        if self.image.shape != self.mask.shape:
            raise ValidationError("shape_mismatch",
                                  f"Image shape {self.image.shape} differs from mask shape {self.mask.shape}")

    @property
    def shape(self):
        return self.image.shape

    def to_dict(self):
        """
        Converts the sample metadata to a dictionary.

        Returns:
            dict: Metadata without pixel payloads.
        """
        return {
            'subject_id': int(self.subject_id),
            'shape': list(self.image.shape),
            'label': self.label.value,
            'deformed': bool(self.deformed),
        }

    def __repr__(self):
        return f'<PhantomSample subject={self.subject_id} {self.label.value}>'


@dataclass(frozen=True)
class Dataset:
    """
    Represents the slices of one split and one domain pool.

    Attributes:
        samples (tuple): PhantomSample objects.
        domain_tag (str): One of DOMAIN_TAGS.
        split (str): One of SPLITS.
    """
    samples: tuple
    domain_tag: str
    split: str

    def __post_init__(self):
        object.__setattr__(self, 'samples', tuple(self.samples))
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValidationError("unknown_pool", f"Unknown domain tag {self.domain_tag}")
        if self.split not in SPLITS:
            raise ValidationError("unknown_split", f"Unknown split {self.split}")
        if self.domain_tag in ('pathological_pool', 'mask_pool'):
            if any(s.label is not Label.PATHOLOGICAL for s in self.samples):
                raise ValidationError("label_mismatch",
                                      f"{self.domain_tag} may only contain pathological slices")
        if self.domain_tag in ('healthy_pool', 'deformed_pool'):
            if any(s.label is not Label.HEALTHY for s in self.samples):
                raise ValidationError("label_mismatch",
                                      f"{self.domain_tag} may only contain healthy slices")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def images(self):
        """Stacks the images into a float32 (N, H, W) array."""
        return np.stack([s.image for s in self.samples]).astype(np.float32)

    def masks(self):
        """Stacks the masks into a uint8 (N, H, W) array."""
        return np.stack([s.mask for s in self.samples]).astype(np.uint8)

    def subject_ids(self):
        return {int(s.subject_id) for s in self.samples}

    def subset(self, count):
        """Returns a dataset holding the first `count` samples."""
        return Dataset(self.samples[:count], self.domain_tag, self.split)

    def __repr__(self):
        return f'<Dataset {self.split}/{self.domain_tag} n={len(self.samples)}>'
