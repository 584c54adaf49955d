"""Multi-layer zero-mean convolution operator and its spectral norm.

The operator is a composition of zero-padded 2D convolutions whose kernels
are forced to zero mean (each output/input slice has its own mean removed),
so constant images are annihilated. Two norm estimators are provided: a
circular-boundary estimate obtained from the DFT of the composed
self-correlation kernel (cheap, used inside training loops) and a power
iteration on the actual zero-padded operator (firm, used at export).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve


def conv2d_same(kernels, x):
    """Zero-padded 'same' 2D convolution of a multichannel image.

    kernels: (c_out, c_in, k, k) with k odd; x: (..., c_in, h, w).
    Returns (..., c_out, h, w). True convolution (kernel flipped), so the
    adjoint is the same routine with kernels transposed and flipped.
    """
    kernels = np.asarray(kernels)
    x = np.asarray(x)
    k = kernels.shape[-1]
    c = (k - 1) // 2
    pad = [(0, 0)] * (x.ndim - 2) + [(c, c), (c, c)]
    x_pad = np.pad(x, pad)
    windows = sliding_window_view(x_pad, (k, k), axis=(-2, -1))
    flipped = kernels[:, :, ::-1, ::-1]
    return np.einsum("oikl,...ihwkl->...ohw", flipped, windows, optimize=True)


def _conv_weight_grad(acts, delta, k):
    """Gradient of <delta, conv2d_same(K, acts)> w.r.t. the (o, i, k, k) kernel."""
    c = (k - 1) // 2
    h, w = acts.shape[-2:]
    pad = [(0, 0)] * (acts.ndim - 2) + [(c, c), (c, c)]
    acts_pad = np.pad(acts, pad)
    c_out, c_in = delta.shape[-3], acts.shape[-3]
    delta_flat = delta.reshape(-1, c_out, h, w)
    out = np.empty((c_out, c_in, k, k))
    for my in range(k):
        for mx in range(k):
            sy, sx = k - 1 - my, k - 1 - mx
            window = acts_pad[..., sy : sy + h, sx : sx + w].reshape(-1, c_in, h, w)
            out[:, :, my, mx] = np.einsum(
                "bohw,bihw->oi", delta_flat, window, optimize=True
            )
    return out


class ConvStack:
    """Composition of zero-padded, zero-mean convolution layers.

    ``layers`` is an ordered list of kernel tensors with shapes
    (c_out, c_in, k, k), k odd, chained so that c_in of a layer matches
    c_out of the previous one and the first layer takes a single channel.
    The canonical model uses three layers; fewer are accepted for
    small-scale analysis.
    """

    def __init__(self, layers):
        layers = [np.asarray(layer, dtype=float) for layer in layers]
        if not 1 <= len(layers) <= 3:
            raise ValueError("expected 1 to 3 convolution layers")
        prev = 1
        for layer in layers:
            if layer.ndim != 4 or layer.shape[-1] != layer.shape[-2]:
                raise ValueError("kernel tensors must have shape (c_out, c_in, k, k)")
            if layer.shape[-1] % 2 == 0:
                raise ValueError("kernel size must be odd")
            if layer.shape[1] != prev:
                raise ValueError("layer channel counts do not chain")
            prev = layer.shape[0]
        self.raw_layers = layers

    @property
    def kernels(self):
        """Effective kernels: each (c_out, c_in) slice has its mean removed."""
        return [
            layer - layer.mean(axis=(-2, -1), keepdims=True)
            for layer in self.raw_layers
        ]

    @property
    def num_channels(self) -> int:
        return self.raw_layers[-1].shape[0]

    @property
    def field_of_view(self) -> int:
        """Kernel size of the equivalent single convolution."""
        return sum(layer.shape[-1] - 1 for layer in self.raw_layers) + 1

    def forward(self, image):
        """Apply the stack to (..., h, w), returning (..., c_out, h, w)."""
        out = np.asarray(image, dtype=float)[..., None, :, :]
        for kernel in self.kernels:
            out = conv2d_same(kernel, out)
        return out

    def adjoint(self, features):
        """Exact adjoint of :meth:`forward` for matching shapes."""
        out = np.asarray(features, dtype=float)
        for kernel in reversed(self.kernels):
            out = conv2d_same(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1], out)
        return out[..., 0, :, :]

    def kernel_grads(self, image, cotangent):
        """Gradient of <cotangent, forward(image)> w.r.t. the effective kernels.

        ``image`` is (..., h, w) and ``cotangent`` (..., c_out, h, w);
        leading axes are summed. Returns one array per layer.
        """
        acts = [np.asarray(image, dtype=float)[..., None, :, :]]
        for kernel in self.kernels[:-1]:
            acts.append(conv2d_same(kernel, acts[-1]))
        deltas = [np.asarray(cotangent, dtype=float)]
        for kernel in reversed(self.kernels[1:]):
            deltas.append(
                conv2d_same(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1], deltas[-1])
            )
        deltas.reverse()
        return [
            _conv_weight_grad(act, delta, kernel.shape[-1])
            for act, delta, kernel in zip(acts, deltas, self.kernels)
        ]

    def composed_kernels(self):
        """Equivalent single-convolution kernels, shape (c_out, K, K).

        Exact for circular or infinite boundaries; the zero-padded stack
        matches it away from image borders.
        """
        comp = self.kernels[0]  # (c1, 1, k, k)
        for layer in self.kernels[1:]:
            c_out, c_in = layer.shape[:2]
            size = comp.shape[-1] + layer.shape[-1] - 1
            new = np.zeros((c_out, 1, size, size))
            for o in range(c_out):
                for i in range(c_in):
                    new[o, 0] += fftconvolve(layer[o, i], comp[i, 0], mode="full")
            comp = new
        return comp[:, 0]

    def gram_kernel(self):
        """Kernel of the single-channel composition U^T U, odd-sized."""
        comp = self.composed_kernels()
        size = 2 * comp.shape[-1] - 1
        gram = np.zeros((size, size))
        for g in comp:
            gram += fftconvolve(g, g[::-1, ::-1], mode="full")
        return gram


def spectral_norm_dft(stack: ConvStack, h: int, w: int) -> float:
    """Exact operator norm of the stack under circular boundary conditions.

    The composed self-correlation kernel is centered at the origin of an
    h-by-w grid; the square root of the largest DFT magnitude is the norm.
    """
    gram = stack.gram_kernel()
    size = gram.shape[-1]
    if h < size or w < size:
        raise ValueError(
            f"grid {h}x{w} smaller than the composed kernel support {size}x{size}"
        )
    padded = np.zeros((h, w))
    padded[:size, :size] = gram
    padded = np.roll(padded, -(size // 2), axis=(0, 1))
    spectrum = np.abs(np.fft.rfft2(padded))
    return float(np.sqrt(spectrum.max()))


def spectral_norm_power(
    stack: ConvStack, h: int, w: int, iters: int = 1000, seed: int = 0, block: int = 4
) -> float:
    """Power iteration for the norm of the zero-padded operator.

    Iterates x -> adjoint(forward(x)) on a small orthonormal block
    (simultaneous iteration) and returns the square root of the largest
    Ritz value. The block absorbs the near-degenerate singular pairs that
    plane-wave symmetry produces in convolution operators, which a single
    vector cannot separate. Deterministic: the start block is drawn from
    ``default_rng(seed)``. Returns 0 for an identically zero stack.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if all(np.all(kernel == 0) for kernel in stack.kernels):
        return 0.0
    rng = np.random.default_rng(seed)
    v = _orthonormalize(rng.standard_normal((block, h, w)))
    for _ in range(iters):
        u = stack.adjoint(stack.forward(v))
        v = _orthonormalize(u)
        if v is None:
            return 0.0
    # largest Ritz value of the final subspace
    av = stack.adjoint(stack.forward(v))
    small = np.einsum("bhw,chw->bc", v, av)
    lam = float(np.linalg.eigvalsh(0.5 * (small + small.T)).max())
    return float(np.sqrt(max(lam, 0.0)))


def _orthonormalize(block):
    """QR-orthonormalize a (b, h, w) block; None if it collapses to zero."""
    if not np.any(block):
        return None
    q, _ = np.linalg.qr(block.reshape(block.shape[0], -1).T)
    return q.T.reshape(block.shape)


def _layer_dfts(stack: ConvStack, h: int, w: int):
    """Per-frequency transfer matrices of each layer, shape (h, w, c_out, c_in)."""
    out = []
    for kernel in stack.kernels:
        k = kernel.shape[-1]
        ey = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(k)) / h)
        ex = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(k)) / w)
        out.append(np.einsum("ha,wb,oiab->hwoi", ey, ex, kernel, optimize=True))
    return out

def dft_norm_with_grad(stack: ConvStack, h: int, w: int):
    """Circular-boundary norm and its gradient w.r.t. the effective kernels.

    Returns ``(norm, grads)`` where grads matches the layer shapes. The
    norm equals :func:`spectral_norm_dft`; the gradient is taken at the
    maximizing frequency (first one in scan order if tied).
    """
    size = 2 * stack.field_of_view - 1
    if h < size or w < size:
        raise ValueError(
            f"grid {h}x{w} smaller than the composed kernel support {size}x{size}"
        )
    dfts = _layer_dfts(stack, h, w)
    transfer = dfts[0]
    for mat in dfts[1:]:
        transfer = np.einsum("hwoc,hwci->hwoi", mat, transfer)
    power = np.sum(np.abs(transfer) ** 2, axis=(-2, -1))
    flat = int(np.argmax(power))
    iy, ix = np.unravel_index(flat, power.shape)
    norm = float(np.sqrt(power[iy, ix]))
    kernels = stack.kernels
    if norm == 0.0:
        return 0.0, [np.zeros_like(kernel) for kernel in kernels]

    mats = [d[iy, ix] for d in dfts]  # per-layer c_out x c_in at the peak
    m = mats[0]
    for mat in mats[1:]:
        m = mat @ m  # (num_channels, 1)
    grads = []
    for idx, kernel in enumerate(kernels):
        # peak response factors as above @ K_hat(layer idx) @ below
        above = np.eye(stack.num_channels, dtype=complex)
        for mat in mats[idx + 1 :][::-1]:
            above = above @ mat
        below = np.ones((1, 1), dtype=complex)  # single input channel
        for mat in mats[:idx]:
            below = mat @ below  # (c_in of layer idx, 1)
        lifted = np.conj(above.conj().T @ m)  # (c_out, 1)
        coeff = lifted @ below.T  # (c_out, c_in)
        k = kernel.shape[-1]
        ey = np.exp(-2j * np.pi * iy * np.arange(k) / h)
        ex = np.exp(-2j * np.pi * ix * np.arange(k) / w)
        phase = np.outer(ey, ex)
        grads.append(np.real(coeff[:, :, None, None] * phase[None, None]) / norm)
    return norm, grads


@dataclass(eq=False)
class NormalizedConv:
    """A stack divided by a cached estimate of its operator norm."""

    stack: ConvStack
    cached_norm: float
    norm_method: str  # 'dft-estimate' | 'power-method'

    def __post_init__(self):
        if not self.cached_norm > 0:
            raise ValueError("cached_norm must be positive")
        if self.norm_method not in ("dft-estimate", "power-method"):
            raise ValueError(f"unknown norm method {self.norm_method!r}")

    @classmethod
    def with_dft_norm(cls, stack: ConvStack, h: int, w: int) -> "NormalizedConv":
        return cls(stack, spectral_norm_dft(stack, h, w), "dft-estimate")

    @classmethod
    def with_power_norm(
        cls, stack: ConvStack, h: int = 64, w: int = 64, iters: int = 1000
    ) -> "NormalizedConv":
        return cls(stack, spectral_norm_power(stack, h, w, iters), "power-method")

    @property
    def num_channels(self) -> int:
        return self.stack.num_channels

    def forward(self, image):
        return self.stack.forward(image) / self.cached_norm

    def adjoint(self, features):
        return self.stack.adjoint(features) / self.cached_norm
