"""Image quality metrics: PSNR and Gaussian-windowed SSIM.

Both operate on float images in [0, 1] (dynamic range 1.0). SSIM follows the
reference formulation: 11 x 11 Gaussian window with sigma 1.5, K1 = 0.01,
K2 = 0.03, valid-window aggregation, computed on the luma of RGB inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fog import to_grayscale

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) in dB; identical images return the 99 dB cap."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, channel_mode: str = "luma") -> float:
    """Mean local SSIM over all valid window positions.

    RGB inputs are reduced per channel_mode: "luma" (default) scores the
    BT.601 luma, "rgb_mean" averages per-channel scores.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 3 and a.shape[2] == 3:
        if channel_mode == "luma":
            return ssim(to_grayscale(a), to_grayscale(b))
        if channel_mode == "rgb_mean":
            return float(np.mean([ssim(a[..., c], b[..., c]) for c in range(3)]))
        raise ValueError(f"ssim: unknown channel_mode {channel_mode!r}")
    if a.ndim != 2:
        raise ValueError(f"ssim: expected H x W or H x W x 3, got {a.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {a.shape} smaller than {SSIM_WINDOW} px window")

    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    def wmean(img):
        v = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.einsum("ijkl,kl->ij", v, w)

    mu_a = wmean(a)
    mu_b = wmean(b)
    var_a = wmean(a * a) - mu_a ** 2
    var_b = wmean(b * b) - mu_b ** 2
    cov = wmean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
