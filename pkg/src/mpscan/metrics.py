"""Image quality metrics for scoring reconstructions.

PSNR uses the peak of the ground truth over the mean squared error; SSIM is
the mean local structural similarity with the canonical choices (11x11
Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range from the
ground truth) and reflective boundary handling.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate

from mpscan.errors import GridMismatchError, UndefinedMetricError
from mpscan.grid import DenseField
from mpscan.stage2 import ConvolutionOperator, convolve

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_same_grid(gt: DenseField, rec: DenseField):
    if not gt.same_grid(rec):
        raise GridMismatchError("metric inputs must share a grid")


def mse(gt: DenseField, rec: DenseField) -> float:
    _check_same_grid(gt, rec)
    diff = gt.values - rec.values
    return float(np.mean(diff * diff))


def psnr(gt: DenseField, rec: DenseField) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    _check_same_grid(gt, rec)
    peak = float(np.max(gt.values))
    if peak == 0.0:
        raise UndefinedMetricError("PSNR undefined for an all-zero reference")
    err = mse(gt, rec)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(gt: DenseField, rec: DenseField) -> float:
    """Mean structural similarity in [-1, 1]."""
    _check_same_grid(gt, rec)
    x = gt.values
    y = rec.values
    drange = float(np.max(x) - np.min(x))
    if drange == 0.0:
        raise UndefinedMetricError("SSIM undefined for a constant reference")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    def smooth(img):
        return correlate(img, w, mode="reflect")

    mu_x = smooth(x)
    mu_y = smooth(y)
    var_x = smooth(x * x) - mu_x * mu_x
    var_y = smooth(y * y) - mu_y * mu_y
    cov = smooth(x * y) - mu_x * mu_y
    c1 = (SSIM_K1 * drange) ** 2
    c2 = (SSIM_K2 * drange) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def trace_reference(gt: DenseField, h, kop: ConvolutionOperator | None = None) -> DenseField:
    """Reference for scoring stage-1 traces: the ground truth convolved with
    the scalar kernel on its own grid."""
    if kop is None:
        kop = ConvolutionOperator(gt.grid, h)
    return convolve(kop, gt)
