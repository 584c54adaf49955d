"""Binary model checkpoints.

Layout (all integers and floats little-endian):

    bytes 0-3   magic b"WCRR"
    uint32      format version (1)
    uint8       norm method (0 = dft-estimate, 1 = power-method)
    uint32      number of convolution layers
    uint32      norm grid (the image side the stored norm was computed on)
    float32 x5  delta, sigma_max, epsilon, mu_raw, cached_norm
    arrays      kernels (one per layer), c_plus, c_minus, c_alpha;
                each as uint32 ndim, uint32 dims..., float32 data

Saving quantizes every parameter to float32 and recomputes the firm
power-method norm of the quantized kernels, so save -> load -> save is
byte-identical. Loading re-verifies ||W|| <= 1 + 1e-6 with a 100-step
power check on the recorded grid.
"""

from __future__ import annotations

import struct

import numpy as np

from .conv import ConvStack, NormalizedConv, spectral_norm_power
from .regularizer import WcrrModel

MAGIC = b"WCRR"
VERSION = 1
_METHODS = ("dft-estimate", "power-method")


def _write_array(fh, arr):
    arr = np.asarray(arr, dtype=np.float32)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype("<f4").tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape))
    data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise ValueError("truncated checkpoint array")
    return data.reshape(shape).astype(float)


def save_model(model: WcrrModel, path, norm_size=64, norm_iters=1000) -> None:
    """Write a checkpoint with a freshly computed firm norm.

    The norm is evaluated on the float32-quantized kernels at
    ``norm_size`` (which should cover the image sizes the model will
    process) so that reloading reproduces the stored model exactly.
    """
    kernels = [
        np.asarray(layer, dtype=np.float32).astype(float)
        for layer in model.conv.stack.raw_layers
    ]
    stack = ConvStack(kernels)
    norm = spectral_norm_power(stack, norm_size, norm_size, norm_iters)
    if norm <= 0:
        raise ValueError("cannot checkpoint a model with an all-zero filter stack")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<B", _METHODS.index("power-method")))
        fh.write(struct.pack("<I", len(kernels)))
        fh.write(struct.pack("<I", norm_size))
        fh.write(
            struct.pack(
                "<5f",
                model.delta,
                model.sigma_max,
                model.epsilon,
                float(model.mu_raw),
                norm,
            )
        )
        for layer in kernels:
            _write_array(fh, layer)
        _write_array(fh, model.c_plus_raw)
        _write_array(fh, model.c_minus_raw)
        _write_array(fh, model.c_alpha_raw)


def load_model(path, verify=True) -> WcrrModel:
    """Read a checkpoint; optionally re-verify the stored normalization."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (method_idx,) = struct.unpack("<B", fh.read(1))
        (n_layers,) = struct.unpack("<I", fh.read(4))
        (norm_grid,) = struct.unpack("<I", fh.read(4))
        delta, sigma_max, epsilon, mu_raw, norm = struct.unpack("<5f", fh.read(20))
        kernels = [_read_array(fh) for _ in range(n_layers)]
        c_plus = _read_array(fh)
        c_minus = _read_array(fh)
        c_alpha = _read_array(fh)
    stack = ConvStack(kernels)
    conv = NormalizedConv(stack, float(norm), _METHODS[method_idx])
    if verify:
        check = spectral_norm_power(stack, norm_grid, norm_grid, iters=100)
        if check / conv.cached_norm > 1 + 1e-6:
            raise ValueError(
                f"{path}: stored norm fails verification "
                f"({check:.8f} vs stored {conv.cached_norm:.8f})"
            )
    return WcrrModel(
        conv=conv,
        mu_raw=float(mu_raw),
        c_plus_raw=c_plus,
        c_minus_raw=c_minus,
        c_alpha_raw=c_alpha,
        delta=float(delta),
        sigma_max=float(sigma_max),
        epsilon=float(epsilon),
    )
