"""Linear measurement operators with exact adjoints.

Variants: identity, column-masked 2D Fourier sampling (complex
measurements carried as stacked real/imaginary planes), a parallel-beam
line-projection operator, and a dense matrix. All pairs satisfy the
adjoint identity <Hx, y> = <x, H^T y> to machine precision; the
projector guarantees this by sharing its interpolation weights between
the forward splat and the back-projection gather.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def block_power_norm(normal_apply, shape, iters=200, seed=0, block=4):
    """Largest singular value via simultaneous iteration on H^T H."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((block,) + tuple(shape))
    v = _orth(v)
    for _ in range(iters):
        u = np.stack([normal_apply(vi) for vi in v])
        if not np.any(u):
            return 0.0
        v = _orth(u)
    av = np.stack([normal_apply(vi) for vi in v])
    small = v.reshape(block, -1) @ av.reshape(block, -1).T
    lam = np.linalg.eigvalsh(0.5 * (small + small.T)).max()
    return float(np.sqrt(max(lam, 0.0)))


def _orth(block):
    q, _ = np.linalg.qr(block.reshape(block.shape[0], -1).T)
    return q.T.reshape(block.shape)


class MeasurementOp:
    """Base class: subclasses set ``in_shape`` and implement apply/adjoint."""

    in_shape: tuple

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def norm(self, iters=200, seed=0) -> float:
        """Operator norm estimate, cached after the first call."""
        cached = getattr(self, "_norm_cache", None)
        if cached is None:
            cached = block_power_norm(
                lambda v: self.adjoint(self.apply(v)), self.in_shape, iters, seed
            )
            self._norm_cache = cached
        return cached

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.in_shape:
            raise ValueError(f"expected image of shape {self.in_shape}, got {x.shape}")
        return x


class Identity(MeasurementOp):
    def __init__(self, shape):
        self.in_shape = tuple(shape)

    def apply(self, x):
        return self._check_input(x).copy()

    def adjoint(self, y):
        return np.asarray(y, dtype=float).copy()

    def norm(self, iters=200, seed=0):
        return 1.0


class DenseOperator(MeasurementOp):
    def __init__(self, matrix, image_shape):
        self.matrix = np.asarray(matrix, dtype=float)
        self.in_shape = tuple(image_shape)
        if self.matrix.shape[1] != int(np.prod(self.in_shape)):
            raise ValueError("matrix width does not match the image size")

    def apply(self, x):
        return self.matrix @ self._check_input(x).ravel()

    def adjoint(self, y):
        return (self.matrix.T @ np.asarray(y, dtype=float)).reshape(self.in_shape)


@dataclass(frozen=True)
class CartesianMask:
    """Column selector over the centered (fftshifted) k-space width."""

    width: int
    acceleration: float
    center_fraction: float
    selected_columns: tuple

    @property
    def num_selected(self) -> int:
        return len(self.selected_columns)


def make_cartesian_mask(width, acceleration, center_fraction, seed=0) -> CartesianMask:
    """Keep all floor(width * cf) center columns plus uniform random others.

    The total number of columns is floor(width / acc); deterministic for a
    fixed seed.
    """
    if acceleration < 1 or not 0 <= center_fraction <= 1:
        raise ValueError("need acceleration >= 1 and center fraction in [0, 1]")
    n_center = int(width * center_fraction)
    n_total = int(width / acceleration)
    if n_center > n_total:
        raise ValueError(
            f"{n_center} center columns exceed the {n_total}-column budget"
        )
    # the block is centered on the DC column of the fftshifted spectrum
    start = width // 2 - n_center // 2
    center = list(range(start, start + n_center))
    rest = [c for c in range(width) if c not in center]
    rng = np.random.default_rng(seed)
    extra = rng.choice(len(rest), size=n_total - n_center, replace=False)
    cols = sorted(center + [rest[i] for i in extra])
    return CartesianMask(width, acceleration, center_fraction, tuple(cols))


class MaskedFourier(MeasurementOp):
    """Selected columns of the unitary, column-centered 2D DFT.

    Measurements are real arrays of shape (2, h, n_cols): the real and
    imaginary planes of the kept spectrum columns. With the unitary
    normalization the operator norm is exactly 1 for any non-empty mask.
    """

    def __init__(self, shape, mask: CartesianMask):
        self.in_shape = tuple(shape)
        if mask.width != self.in_shape[1]:
            raise ValueError("mask width does not match the image width")
        self.mask = mask
        self.columns = np.asarray(mask.selected_columns, dtype=int)

    @property
    def out_shape(self):
        return (2, self.in_shape[0], len(self.columns))

    def apply(self, x):
        x = self._check_input(x)
        spec = np.fft.fftshift(np.fft.fft2(x, norm="ortho"), axes=1)[:, self.columns]
        return np.stack([spec.real, spec.imag])

    def adjoint(self, y):
        y = np.asarray(y, dtype=float)
        spec = np.zeros(self.in_shape, dtype=complex)
        spec[:, self.columns] = y[0] + 1j * y[1]
        return np.fft.ifft2(np.fft.ifftshift(spec, axes=1), norm="ortho").real

    def norm(self, iters=200, seed=0):
        return 1.0


class Radon(MeasurementOp):
    """Parallel-beam projector: each pixel splats its value onto the two
    nearest detector bins with linear weights.

    A pixel carries unit mass regardless of the view angle, so a centered
    delta image produces one unit hit per angle on the center ray (exactly
    one bin when the detector count is odd). Angles cover [0, pi).
    """

    def __init__(self, image_shape, num_angles, num_detectors, det_spacing=1.0):
        self.in_shape = tuple(image_shape)
        self.num_angles = int(num_angles)
        self.num_detectors = int(num_detectors)
        h, w = self.in_shape
        angles = np.arange(self.num_angles) * np.pi / self.num_angles
        cols = np.arange(w) - (w - 1) / 2
        rows = np.arange(h) - (h - 1) / 2
        # detector coordinate of every pixel center, per angle
        pos = (
            cols[None, None, :] * np.cos(angles)[:, None, None]
            + rows[None, :, None] * np.sin(angles)[:, None, None]
        ) / det_spacing + (self.num_detectors - 1) / 2
        base = np.floor(pos).astype(int)
        self._frac = pos - base
        self._lo_valid = (base >= 0) & (base < self.num_detectors)
        self._hi_valid = (base + 1 >= 0) & (base + 1 < self.num_detectors)
        self._lo = np.clip(base, 0, self.num_detectors - 1)
        self._hi = np.clip(base + 1, 0, self.num_detectors - 1)
        # global bin index per (angle, pixel) for a single bincount pass
        offsets = (np.arange(self.num_angles) * self.num_detectors)[:, None, None]
        self._lo_flat = (self._lo + offsets).ravel()
        self._hi_flat = (self._hi + offsets).ravel()

    @property
    def out_shape(self):
        return (self.num_angles, self.num_detectors)

    def apply(self, x):
        x = self._check_input(x)
        vals = np.broadcast_to(x, (self.num_angles,) + self.in_shape)
        lo_w = (vals * (1 - self._frac) * self._lo_valid).ravel()
        hi_w = (vals * self._frac * self._hi_valid).ravel()
        size = self.num_angles * self.num_detectors
        sino = np.bincount(self._lo_flat, weights=lo_w, minlength=size)
        sino += np.bincount(self._hi_flat, weights=hi_w, minlength=size)
        return sino.reshape(self.out_shape)

    def adjoint(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != self.out_shape:
            raise ValueError(f"expected sinogram of shape {self.out_shape}")
        flat = y.ravel()
        back = flat[self._lo_flat].reshape(self._lo.shape) * (1 - self._frac)
        back = back * self._lo_valid
        back += flat[self._hi_flat].reshape(self._hi.shape) * self._frac * self._hi_valid
        return back.sum(axis=0)


def simulate(op: MeasurementOp, x, noise_sigma, seed=0):
    """Noisy measurements: apply(x) plus i.i.d. Gaussian noise per entry."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    y = op.apply(x)
    if noise_sigma == 0:
        return y
    rng = np.random.default_rng(seed)
    return y + noise_sigma * rng.standard_normal(y.shape)
