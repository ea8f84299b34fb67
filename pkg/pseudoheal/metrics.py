"""
metrics.py

This module holds the image comparison primitives used by evaluation.

SSIM uses a Gaussian window (width 11, sigma 1.5) applied without padding, so
only windows lying fully inside the image contribute. MS-SSIM averages down by
2 between scales and keeps as many of the five standard scales as fit an image
at least one window wide; the weights of the kept scales are renormalised to
sum to one.

Functions:
- gaussian_window: Normalised 1-D Gaussian.
- ssim: Per-image SSIM, optionally with the contrast-structure term.
- ms_ssim: Per-image multi-scale SSIM.
- canny_edges: Binary Canny edge maps of a batch.
- dice_score / iou_score: Overlap of binary masks.
"""

import logging

import numpy as np
import torch
import torch.nn.functional as F

from skimage.feature import canny

from .errors import MetricError, ShapeError

logger = logging.getLogger(__name__)

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
K1, K2 = 0.01, 0.03


def _as_batch(x):
    """np.ndarray or tensor of shape (H, W), (N, H, W) or (N, 1, H, W) -> float64 (N, 1, H, W)."""
    x = x.detach().cpu() if torch.is_tensor(x) else torch.as_tensor(np.asarray(x))
    x = x.to(torch.float64)
    if x.dim() == 2:
        x = x[None, None]
    elif x.dim() == 3:
        x = x[:, None]
    if x.dim() != 4 or x.shape[1] != 1:
        raise ShapeError("shape_mismatch", f"Expected single-channel images, got shape {tuple(x.shape)}")
    return x


def gaussian_window(size=11, sigma=1.5):
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter(x, win):
    x = F.conv2d(x, win.reshape(1, 1, 1, -1))
    return F.conv2d(x, win.reshape(1, 1, -1, 1))


def ssim(x, y, data_range=1.0, window=11, sigma=1.5, return_cs=False):
    """
    Structural similarity per image.

    Args:
        x, y: Image batches of equal shape.
        data_range (float): Dynamic range of the images.
        window (int): Gaussian window width.
        sigma (float): Gaussian window sigma.
        return_cs (bool): Also return the contrast-structure term.

    Returns:
        torch.Tensor | tuple: (N,) float64 SSIM, and (N,) cs when requested.

    Raises:
        MetricError: If an image is smaller than the window.
    """
    x, y = _as_batch(x), _as_batch(y)
    if x.shape != y.shape:
        raise ShapeError("shape_mismatch", f"SSIM inputs differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    if min(x.shape[-2:]) < window:
        raise MetricError("image_too_small", f"Images of size {tuple(x.shape[-2:])} are smaller than the window {window}")
    win = gaussian_window(window, sigma)
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2

    mu_x, mu_y = _filter(x, win), _filter(y, win)
    sigma_xx = _filter(x * x, win) - mu_x ** 2
    sigma_yy = _filter(y * y, win) - mu_y ** 2
    sigma_xy = _filter(x * y, win) - mu_x * mu_y

    cs_map = (2 * sigma_xy + c2) / (sigma_xx + sigma_yy + c2)
    ssim_map = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1) * cs_map
    values = ssim_map.flatten(1).mean(1)
    if return_cs:
        return values, cs_map.flatten(1).mean(1)
    return values


def ms_ssim_scales(image_size, window=11):
    """Number of scales used for images of the given (H, W)."""
    side, scales = min(image_size), 0
    while scales < len(MS_SSIM_WEIGHTS) and side >= window:
        scales += 1
        side //= 2
    return scales


def ms_ssim(x, y, data_range=1.0, window=11, sigma=1.5):
    """
    Multi-scale SSIM per image.

    Returns:
        torch.Tensor: (N,) float64 values in [0, 1].

    Raises:
        MetricError: If an image is smaller than the window.
    """
    x, y = _as_batch(x), _as_batch(y)
    scales = ms_ssim_scales(x.shape[-2:], window)
    if scales == 0:
        raise MetricError("image_too_small", f"Images of size {tuple(x.shape[-2:])} are smaller than the window {window}")
    weights = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=torch.float64)
    weights = weights / weights.sum()

    factors = []
    for level in range(scales):
        value, cs = ssim(x, y, data_range, window, sigma, return_cs=True)
        factors.append(torch.relu(cs) if level < scales - 1 else torch.relu(value))
        if level < scales - 1:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    stacked = torch.stack(factors, dim=0)
    return torch.prod(stacked ** weights[:, None], dim=0)


def canny_edges(images, sigma=1.0, low_threshold=0.1, high_threshold=0.2):
    """
    Canny edge maps of [0, 1] images.

    Returns:
        np.ndarray: float32 (N, H, W) binary edge maps.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    return np.stack([canny(image, sigma=sigma, low_threshold=low_threshold, high_threshold=high_threshold)
                     for image in images]).astype(np.float32)


def _binary_pairs(pred, target):
    pred, target = np.asarray(pred).astype(bool), np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise ShapeError("shape_mismatch", f"Mask shapes differ: {pred.shape} vs {target.shape}")
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    return pred.reshape(pred.shape[0], -1), target.reshape(target.shape[0], -1)


def dice_score(pred, target):
    """
    Per-image hard Dice 2|A&B| / (|A| + |B|). Two empty masks score 1.

    Returns:
        np.ndarray: (N,) float64.
    """
    pred, target = _binary_pairs(pred, target)
    intersection = (pred & target).sum(1)
    sizes = pred.sum(1) + target.sum(1)
    return np.where(sizes == 0, 1.0, 2 * intersection / np.maximum(sizes, 1))


def iou_score(pred, target):
    """Per-image intersection over union. Two empty masks score 1."""
    pred, target = _binary_pairs(pred, target)
    intersection = (pred & target).sum(1)
    union = (pred | target).sum(1)
    return np.where(union == 0, 1.0, intersection / np.maximum(union, 1))
