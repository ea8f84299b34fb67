"""
phantom.py

This module procedurally generates brain-like 2D slices with optional
hyper-intense lesions and mass-effect deformations.

Each slice is built from concentric ellipses (grey matter rim, white matter,
deep grey nucleus, two ventricles) with per-subject jittered radii and a smooth
intensity texture, so that structural similarity outside a lesion carries
subject identity. Lesions are additive disks with a one pixel feathered rim.

Functions:
- generate_phantom: Generates a sequence of samples from a PhantomSpec.
- apply_deformation: Warps an image with a smooth radial push.
- radial_displacement: The displacement field used by apply_deformation.
- rasterize_disk: Binary disk on the pixel grid.
"""

import logging

import numpy as np
from pydantic import ValidationError as PydanticValidationError
from scipy import ndimage

from .errors import ConfigError
from .models.sample import Label, PhantomSample
from .schemas.phantom import PhantomSpec

logger = logging.getLogger(__name__)

HEALTHY_CEILING = 0.85
GREY_MATTER = 0.45
WHITE_MATTER = 0.65
DEEP_GREY = 0.52
CSF = 0.15
TEXTURE_AMPLITUDE = 0.04


def _validated(spec):
    try:
        return PhantomSpec.model_validate(spec if isinstance(spec, dict) else spec.model_dump())
    except PydanticValidationError as e:
        raise ConfigError("invalid_phantom_spec", str(e.errors()[0]['msg'])) from e


def rasterize_disk(shape, center, radius):
    """
    Rasterizes a disk on the pixel grid.

    Args:
        shape (tuple): (H, W).
        center (tuple): (row, col) of the disk center.
        radius (float): Disk radius in pixels.

    Returns:
        np.ndarray: uint8 mask, 1 where the pixel center lies within the disk.
    """
    rows, cols = np.mgrid[:shape[0], :shape[1]]
    inside = (rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius ** 2
    return inside.astype(np.uint8)


def _ellipse_radius(rows, cols, center, radii):
    return np.sqrt(((rows - center[0]) / radii[0]) ** 2 + ((cols - center[1]) / radii[1]) ** 2)


def _anatomy(shape, rng):
    """Returns the healthy slice and its brain support for one subject."""
    height, width = shape
    rows, cols = np.mgrid[:height, :width].astype(np.float64)
    center = (height / 2 + rng.uniform(-0.03, 0.03) * height,
              width / 2 + rng.uniform(-0.03, 0.03) * width)
    radii = (0.40 * height * rng.uniform(0.95, 1.05), 0.33 * width * rng.uniform(0.95, 1.05))

    rho = _ellipse_radius(rows, cols, center, radii)
    image = np.zeros(shape)
    brain = rho <= 1.0
    image[brain] = GREY_MATTER
    image[rho <= rng.uniform(0.78, 0.86)] = WHITE_MATTER
    image[rho <= rng.uniform(0.25, 0.32)] = DEEP_GREY

    spread = rng.uniform(0.10, 0.16) * width
    ventricle_radii = (0.12 * height * rng.uniform(0.85, 1.15), 0.045 * width * rng.uniform(0.85, 1.15))
    for side in (-1, 1):
        ventricle_center = (center[0] - 0.05 * height, center[1] + side * spread / 2)
        image[_ellipse_radius(rows, cols, ventricle_center, ventricle_radii) <= 1.0] = CSF

    image = ndimage.gaussian_filter(image, sigma=0.7)
    texture = ndimage.gaussian_filter(rng.normal(size=shape), sigma=2.0)
    texture /= max(np.abs(texture).max(), 1e-12)
    image = image + TEXTURE_AMPLITUDE * texture * brain
    return np.clip(image, 0.0, HEALTHY_CEILING), brain, center, radii


def _lesion_site(rng, center, radii, radius):
    angle = rng.uniform(0.0, 2 * np.pi)
    reach = 0.6 * np.sqrt(rng.uniform(0.0, 1.0))
    row = center[0] + reach * (radii[0] - radius) * np.sin(angle)
    col = center[1] + reach * (radii[1] - radius) * np.cos(angle)
    return int(round(row)), int(round(col))


def _lesion_weight(shape, center, radius):
    """Full weight inside the disk, linear fall-off over one pixel outside it."""
    rows, cols = np.mgrid[:shape[0], :shape[1]]
    distance = np.sqrt((rows - center[0]) ** 2 + (cols - center[1]) ** 2)
    return np.clip(radius + 1.0 - distance, 0.0, 1.0)


def radial_displacement(shape, center, magnitude, sigma):
    """
    Computes a Gaussian-windowed radial push.

    The displacement at distance r from `center` points away from it and has
    length magnitude * (r / sigma) * exp(1/2 - r^2 / (2 sigma^2)), which is
    smooth, zero at the center and peaks at `magnitude` when r == sigma.

    Returns:
        tuple: (d_row, d_col) arrays of shape `shape`.
    """
    rows, cols = np.mgrid[:shape[0], :shape[1]].astype(np.float64)
    d_row = rows - center[0]
    d_col = cols - center[1]
    scale = (magnitude / sigma) * np.exp(0.5 - (d_row ** 2 + d_col ** 2) / (2 * sigma ** 2))
    return scale * d_row, scale * d_col


def apply_deformation(image, magnitude, seed, center=None, sigma=None):
    """
    Warps an image with a smooth radial displacement field.

    Args:
        image (np.ndarray): (H, W) slice.
        magnitude (float): Peak displacement in pixels, >= 0.
        seed (int): Seed of the field width draw.
        center (tuple | None): (row, col) of the push, the image center if None.
        sigma (float | None): Width of the Gaussian window; drawn from the seed if None.

    Returns:
        np.ndarray: The warped image; an exact copy when magnitude is 0.
    """
    if magnitude < 0:
        raise ConfigError("invalid_magnitude", f"Deformation magnitude must be >= 0, got {magnitude}")
    image = np.asarray(image)
    if magnitude == 0:
        return image.copy()

    shape = image.shape
    if center is None:
        center = ((shape[0] - 1) / 2, (shape[1] - 1) / 2)
    if sigma is None:
        sigma = np.random.default_rng(seed).uniform(0.15, 0.25) * min(shape)

    d_row, d_col = radial_displacement(shape, center, magnitude, sigma)
    rows, cols = np.mgrid[:shape[0], :shape[1]].astype(np.float64)
    warped = ndimage.map_coordinates(image.astype(np.float64), [rows - d_row, cols - d_col],
                                     order=1, mode='nearest')
    return warped.astype(image.dtype)


def _sample(spec, index):
    subject_id = spec.subject_offset + index
    rng = np.random.default_rng([spec.seed, subject_id])
    shape = tuple(spec.image_size)
    healthy, _, brain_center, radii = _anatomy(shape, rng)

    has_lesion = rng.uniform() < spec.lesion_probability
    lesion_center, radius = None, None
    if has_lesion:
        low, high = spec.lesion_radius_range
        radius = int(rng.integers(low, high + 1))
        lesion_center = _lesion_site(rng, brain_center, radii, radius)

    deform_seed = int(rng.integers(0, 2 ** 31 - 1))
    if spec.deform:
        healthy = apply_deformation(healthy, spec.deform_magnitude, deform_seed, center=lesion_center)

    mask = np.zeros(shape, dtype=np.uint8)
    image = healthy
    if has_lesion:
        mask = rasterize_disk(shape, lesion_center, radius)
        image = np.clip(healthy + spec.lesion_intensity * _lesion_weight(shape, lesion_center, radius), 0.0, 1.0)

    return PhantomSample(
        image=image.astype(np.float32),
        mask=mask,
        label=Label.PATHOLOGICAL if has_lesion else Label.HEALTHY,
        subject_id=subject_id,
        deformed=bool(spec.deform and spec.deform_magnitude > 0),
        lesion_center=lesion_center,
        lesion_radius=radius,
        latent_healthy=healthy.astype(np.float32),
    )


def generate_phantom(spec, n):
    """
    Generates phantom slices.

    Args:
        spec (PhantomSpec | dict): Generator parameters.
        n (int): Number of samples, >= 1.

    Returns:
        list: n PhantomSample objects; subject ids run from spec.subject_offset.

    Raises:
        ConfigError: If the spec or n is invalid.
    """
    spec = _validated(spec)
    if n < 1:
        raise ConfigError("invalid_count", f"Sample count must be >= 1, got {n}")
    samples = [_sample(spec, i) for i in range(n)]
    logger.debug("Generated %d phantom slices (%d pathological)", n,
                 sum(s.label is Label.PATHOLOGICAL for s in samples))
    return samples
