"""Image quality metrics: PSNR and SSIM on [0, 1] images."""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

PSNR_CAP = 99.0


def psnr(reference, candidate, peak=1.0) -> float:
    """Peak signal-to-noise ratio, capped at 99 dB for (near-)identical pairs."""
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if reference.shape != candidate.shape:
        raise ValueError("images must have the same shape")
    mse = float(np.mean((reference - candidate) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2
    g = np.exp(-0.5 * ((np.arange(size) - half) / sigma) ** 2)
    window = np.outer(g, g)
    return window / window.sum()


def ssim(reference, candidate, peak=1.0, window_size=11, window_sigma=1.5) -> float:
    """Structural similarity with an 11x11 Gaussian window (std 1.5).

    Local statistics use the standard C1 = (0.01 peak)^2, C2 = (0.03 peak)^2
    stabilizers and are averaged over the valid (fully overlapping) region.
    """
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if reference.shape != candidate.shape:
        raise ValueError("images must have the same shape")
    if min(reference.shape) < window_size:
        raise ValueError("image smaller than the SSIM window")
    window = _gaussian_window(window_size, window_sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def smooth(im):
        return fftconvolve(im, window, mode="valid")

    mu1 = smooth(reference)
    mu2 = smooth(candidate)
    var1 = smooth(reference * reference) - mu1 * mu1
    var2 = smooth(candidate * candidate) - mu2 * mu2
    cov = smooth(reference * candidate) - mu1 * mu2
    score = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
        (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    )
    return float(score.mean())
