"""Test images: the Shepp-Logan phantom and synthetic piecewise-smooth scenes."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

# (intensity, a, b, x0, y0, angle_deg) with the modified (high-contrast) values
_SHEPP_LOGAN = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]


def shepp_logan(size: int) -> np.ndarray:
    """Rasterized modified Shepp-Logan phantom, normalized to peak 1."""
    coords = np.linspace(-1.0, 1.0, size)
    x, y = np.meshgrid(coords, -coords)  # row 0 at the top
    img = np.zeros((size, size))
    for value, a, b, x0, y0, angle in _SHEPP_LOGAN:
        theta = np.deg2rad(angle)
        xr = (x - x0) * np.cos(theta) + (y - y0) * np.sin(theta)
        yr = -(x - x0) * np.sin(theta) + (y - y0) * np.cos(theta)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    img = np.clip(img, 0.0, None)
    peak = img.max()
    return img / peak if peak > 0 else img


def synthetic_scene(rng, size: int, num_shapes: int = 6, smooth: float = 0.6,
                    num_textures: int = 2):
    """Random piecewise-smooth image: shaded background, ellipses and bars,
    plus a few windowed oriented gratings standing in for texture.

    Values are clipped to [0, 1]; a light blur removes rasterization
    aliasing so edges span a couple of pixels, as in natural photographs.
    """
    coords = np.linspace(-1.0, 1.0, size)
    x, y = np.meshgrid(coords, coords)
    gx, gy = rng.uniform(-0.3, 0.3, 2)
    img = rng.uniform(0.2, 0.6) + gx * x + gy * y
    for _ in range(num_shapes):
        value = rng.uniform(-0.6, 0.6)
        if rng.uniform() < 0.5:
            a, b = rng.uniform(0.08, 0.6, 2)
            x0, y0 = rng.uniform(-0.8, 0.8, 2)
            theta = rng.uniform(0, np.pi)
            xr = (x - x0) * np.cos(theta) + (y - y0) * np.sin(theta)
            yr = -(x - x0) * np.sin(theta) + (y - y0) * np.cos(theta)
            mask = (xr / a) ** 2 + (yr / b) ** 2 <= 1.0
        else:
            theta = rng.uniform(0, np.pi)
            offset = rng.uniform(-0.7, 0.7)
            width = rng.uniform(0.05, 0.4)
            proj = x * np.cos(theta) + y * np.sin(theta)
            mask = np.abs(proj - offset) <= width
        img = np.where(mask, img + value, img)
    for _ in range(num_textures):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(4.0, 0.25 * size) * np.pi
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.15)
        x0, y0 = rng.uniform(-0.6, 0.6, 2)
        a, b = rng.uniform(0.2, 0.8, 2)
        window = ((x - x0) / a) ** 2 + ((y - y0) / b) ** 2 <= 1.0
        grating = amp * np.sin(freq * (x * np.cos(theta) + y * np.sin(theta)) + phase)
        img = np.where(window, img + grating, img)
    if smooth > 0:
        img = gaussian_filter(img, smooth)
    return np.clip(img, 0.0, 1.0)
