"""
tests/test_metrics.py

Tests of SSIM, MS-SSIM, Canny edges and mask overlaps.
"""

import math

import numpy as np
import pytest

from pseudoheal.errors import MetricError
from pseudoheal.metrics import canny_edges, dice_score, iou_score, ms_ssim, ms_ssim_scales, ssim


def naive_ssim(x, y, window=11, sigma=1.5, data_range=1.0):
    g = [math.exp(-(i - window // 2) ** 2 / (2 * sigma ** 2)) for i in range(window)]
    total = sum(g)
    w = [[g[i] * g[j] / total ** 2 for j in range(window)] for i in range(window)]
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    height, width = x.shape
    values = []
    for top in range(height - window + 1):
        for left in range(width - window + 1):
            mx = my = sxx = syy = sxy = 0.0
            for i in range(window):
                for j in range(window):
                    a, b = x[top + i, left + j], y[top + i, left + j]
                    mx += w[i][j] * a
                    my += w[i][j] * b
                    sxx += w[i][j] * a * a
                    syy += w[i][j] * b * b
                    sxy += w[i][j] * a * b
            sxx, syy, sxy = sxx - mx * mx, syy - my * my, sxy - mx * my
            values.append((2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(values) / len(values)


@pytest.fixture
def pair():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(32, 32))
    y = np.clip(x + rng.normal(scale=0.1, size=(32, 32)), 0, 1)
    return x, y


def test_ssim_matches_sliding_window(pair):
    x, y = pair
    assert float(ssim(x, y)[0]) == pytest.approx(naive_ssim(x, y), abs=1e-6)


def test_ssim_of_identical_images(pair):
    x, _ = pair
    assert float(ssim(x, x)[0]) == pytest.approx(1.0, abs=1e-12)


def test_ms_ssim_scale_count():
    assert ms_ssim_scales((32, 32)) == 2
    assert ms_ssim_scales((64, 64)) == 3
    assert ms_ssim_scales((256, 256)) == 5
    assert ms_ssim_scales((8, 8)) == 0


def test_ms_ssim_properties(pair):
    x, y = pair
    assert float(ms_ssim(x, x)[0]) == pytest.approx(1.0, abs=1e-6)
    value = float(ms_ssim(x, y)[0])
    assert 0.0 <= value < 1.0
    assert value == pytest.approx(float(ms_ssim(y, x)[0]), abs=1e-9)


def test_ms_ssim_batches(pair):
    x, y = pair
    values = ms_ssim(np.stack([x, x]), np.stack([x, y]))
    assert values.shape == (2,)
    assert float(values[0]) == pytest.approx(1.0, abs=1e-6)


def test_small_images_are_rejected():
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(MetricError):
        ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_canny_of_constant_image_is_empty():
    assert canny_edges(np.full((2, 32, 32), 0.7)).sum() == 0


def test_canny_finds_a_step():
    image = np.zeros((32, 32))
    image[:, 16:] = 1.0
    edges = canny_edges(image)
    assert edges.shape == (1, 32, 32)
    assert edges[0, 8:24, 14:18].sum() > 0


def test_overlap_scores():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0, :] = 1
    pred = np.zeros((4, 4), dtype=np.uint8)
    pred[0, :2] = 1
    assert float(dice_score(pred, gt)[0]) == pytest.approx(2 * 2 / (2 + 4))
    assert float(iou_score(pred, gt)[0]) == pytest.approx(0.5)
    assert float(dice_score(gt, gt)[0]) == 1.0
    assert float(dice_score(np.zeros((4, 4)), gt)[0]) == 0.0
    assert float(dice_score(np.zeros((4, 4)), np.zeros((4, 4)))[0]) == 1.0
