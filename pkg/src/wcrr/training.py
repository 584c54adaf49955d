"""Multi-noise-level training of the ridge regularizer.

Each batch element is a clean patch corrupted with its own noise level
sigma ~ U[0, sigma_max]. The forward pass runs the proximal denoiser to
a fixed tolerance; gradients w.r.t. the raw parameters are obtained by
implicit differentiation of the optimality condition

    xhat - y + grad R(theta, xhat) = 0,

i.e. by solving (I + H_R(xhat)) w = sign(xhat - x) with conjugate
gradients and propagating w through the analytic parameterization chain
(spectral normalization, spline projection/symmetrization with clip
derivatives, mu clamp, alpha exponential). During training the operator
norm is the cheap DFT estimate recomputed every step; phi_minus slopes
are capped slightly below 1 so the backward system stays invertible.
The exported model carries a firm power-method norm and the full cap.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conv import ConvStack, NormalizedConv, dft_norm_with_grad
from .imageio import read_image
from .phantoms import synthetic_scene
from .regularizer import ALPHA_KNOTS, WcrrModel
from .solvers import prox_denoise_batch as _prox_batch
from .splines import symmetrize_odd_grad

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults follow the reference recipe, with
    desk-scale step/batch counts."""

    sigma_max: float = 30.0 / 255.0
    patch_size: int = 40
    batch_size: int = 32
    steps: int = 500
    lr_mu: float = 5e-2
    lr_conv: float = 5e-3
    lr_alpha: float = 5e-3
    lr_splines: float = 5e-4
    lr_decay: float = 0.75
    lr_decay_every: int = 500
    forward_tol: float = 1e-4
    forward_max_iters: int = 2000
    backward_tol: float = 1e-6
    backward_max_iters: int = 400
    seed: int = 0
    # model hyperparameters for a fresh run
    channels: tuple = (4, 8, 60)
    kernel_size: int = 5
    num_knots: int = 101
    delta: float = 2e-3
    alpha_init: float = 5.0
    slope_margin: float = 1e-3
    export_norm_size: int = 64
    export_norm_iters: int = 1000
    checkpoint_every: int = 0

    def __post_init__(self):
        if min(self.lr_mu, self.lr_conv, self.lr_alpha, self.lr_splines) < 0:
            raise ValueError("learning rates must be >= 0")
        if self.forward_tol <= 0 or self.backward_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class PatchDataset:
    """Clean grayscale training patches with values in [0, 1]."""

    patches: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=float)
        if self.patches.ndim != 3:
            raise ValueError("patches must form an (n, p, p) array")
        if self.patches.size == 0:
            raise ValueError("dataset is empty")
        if self.patches.min() < -1e-9 or self.patches.max() > 1 + 1e-9:
            raise ValueError("patch values must lie in [0, 1]")

    def __len__(self):
        return len(self.patches)

    @classmethod
    def from_images(cls, images, patch_size, stride=None, source=""):
        stride = stride or patch_size
        tiles = []
        for img in images:
            img = np.asarray(img, dtype=float)
            for r in range(0, img.shape[0] - patch_size + 1, stride):
                for c in range(0, img.shape[1] - patch_size + 1, stride):
                    tiles.append(img[r : r + patch_size, c : c + patch_size])
        if not tiles:
            raise ValueError("no patches extracted; images smaller than patch size?")
        return cls(np.stack(tiles), source)

    @classmethod
    def from_directory(cls, path, patch_size, stride=None):
        """Tile every PGM/PFM image found under ``path`` (sorted order)."""
        files = sorted(
            p for p in Path(path).iterdir() if p.suffix.lower() in (".pgm", ".pfm")
        )
        if not files:
            raise ValueError(f"no PGM/PFM images in {path}")
        images = [read_image(p) for p in files]
        return cls.from_images(images, patch_size, stride, source=str(path))

    @classmethod
    def synthetic(cls, num_images, image_size, patch_size, stride=None, seed=0):
        """Piecewise-smooth generated scenes, tiled into patches."""
        rng = np.random.default_rng(seed)
        images = [synthetic_scene(rng, image_size) for _ in range(num_images)]
        return cls.from_images(images, patch_size, stride, source="synthetic")


@dataclass
class Batch:
    clean: np.ndarray
    noisy: np.ndarray
    sigma: np.ndarray


def sample_batch(dataset: PatchDataset, config: TrainConfig, rng) -> Batch:
    """Draw patches with replacement; each gets its own noise level."""
    idx = rng.integers(0, len(dataset), size=config.batch_size)
    clean = dataset.patches[idx]
    sigma = rng.uniform(0.0, config.sigma_max, size=config.batch_size)
    noisy = clean + sigma[:, None, None] * rng.standard_normal(clean.shape)
    return Batch(clean=clean, noisy=noisy, sigma=sigma)


def _cg_batch(matvec, rhs, tol, max_iters):
    """Batched conjugate gradients; rows stop at ||r|| <= tol * ||rhs||."""
    x = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = np.sum(r * r, axis=(1, 2))
    target = tol * tol * rs
    iters = 0
    for _ in range(max_iters):
        active = rs > target
        if not np.any(active):
            break
        iters += 1
        ap = matvec(p)
        pap = np.sum(p * ap, axis=(1, 2))
        alpha = np.where(active & (pap > 0), rs / np.maximum(pap, 1e-300), 0.0)
        x += alpha[:, None, None] * p
        r -= alpha[:, None, None] * ap
        rs_new = np.sum(r * r, axis=(1, 2))
        beta = np.where(active, rs_new / np.maximum(rs, 1e-300), 0.0)
        p = r + beta[:, None, None] * p
        rs = rs_new
    return x, np.sqrt(rs), iters


def _zero_mean_grad(grads):
    return [g - g.mean(axis=(-2, -1), keepdims=True) for g in grads]


def batch_loss(model, batch: Batch, config: TrainConfig) -> float:
    """Forward-only training loss (used by gradient checks)."""
    step_model, _, _ = _normalized_step_model(model, batch)
    xhat, ok, _ = _prox_batch(
        step_model, batch.noisy, batch.sigma, config.forward_tol,
        config.forward_max_iters,
    )
    return float(np.sum(np.abs(xhat[ok] - batch.clean[ok])))


def _normalized_step_model(model, batch):
    """Fresh DFT normalization on the batch grid, as used in the forward pass."""
    h, w = batch.clean.shape[-2:]
    nu, nu_grads = dft_norm_with_grad(model.conv.stack, h, w)
    conv = NormalizedConv(model.conv.stack, nu, "dft-estimate")
    return dataclasses.replace(model, conv=conv), nu, nu_grads


def loss_and_grad(model, batch: Batch, config: TrainConfig):
    """Training loss, raw-parameter gradients, and diagnostics for one batch.

    Elements whose forward solve misses the tolerance within the iteration
    budget are skipped with a warning. Returns ``(loss, grads, aux)`` with
    grads keyed by raw parameter name.
    """
    step_model, nu, nu_grads = _normalized_step_model(model, batch)
    stack = step_model.conv.stack
    xhat, ok, fwd_iters = _prox_batch(
        step_model, batch.noisy, batch.sigma, config.forward_tol,
        config.forward_max_iters,
    )
    if not np.all(ok):
        logger.warning(
            "skipping %d/%d batch elements: forward solve hit max_iters",
            int(np.sum(~ok)), len(ok),
        )
    clean = batch.clean[ok]
    sigma = batch.sigma[ok]
    xhat = xhat[ok]
    grads = {
        "mu_raw": 0.0,
        "c_plus_raw": np.zeros_like(model.c_plus_raw),
        "c_minus_raw": np.zeros_like(model.c_minus_raw),
        "c_alpha_raw": np.zeros_like(model.c_alpha_raw),
        "kernels": [np.zeros_like(kern) for kern in stack.raw_layers],
    }
    residual = xhat - clean
    loss = float(np.sum(np.abs(residual)))
    aux = {
        "norm_estimate": nu,
        "kept": int(np.sum(ok)),
        "forward_iters": fwd_iters,
        "cg_residual": np.zeros(0),
        "cg_iters": 0,
    }
    if xhat.shape[0] == 0:
        return loss, grads, aux

    # backward: (I + H_R(xhat)) w = sign(xhat - clean)
    v = np.sign(residual)
    hvp = step_model.hvp_operator(xhat, sigma)
    w, cg_res, cg_iters = _cg_batch(
        lambda u: u + hvp(u), v, config.backward_tol, config.backward_max_iters
    )
    aux["cg_residual"] = cg_res
    aux["cg_iters"] = cg_iters

    # gradients of S = <grad R(xhat), w>; the loss gradient is -dS/dtheta
    z = step_model.conv.forward(xhat)
    q = step_model.conv.forward(w)
    a = step_model.alpha(sigma)
    a4 = a[..., None, None]
    az = a4 * z
    phi_prime = step_model.phi_prime(az)
    phi_plus_vals = step_model.plus_spline.value(az)
    phi_minus_vals = step_model.minus_spline.value(az)
    phi_vals = step_model.mu * phi_plus_vals - phi_minus_vals

    # mu (clamped at 0)
    ds_dmu = float(np.sum(phi_plus_vals / a4 * q))
    grads["mu_raw"] = -ds_dmu if model.mu_raw >= 0 else 0.0

    # spline coefficients, through odd symmetrization and projection
    plus_weights = (step_model.mu / a4) * q
    ds_dplus = step_model.plus_spline.value_backward(az, plus_weights)
    grads["c_plus_raw"] = -symmetrize_odd_grad(
        ds_dplus, model.c_plus_raw, model.delta
    )
    minus_weights = (-1.0 / a4) * q
    ds_dminus = step_model.minus_spline.value_backward(az, minus_weights)
    grads["c_minus_raw"] = -symmetrize_odd_grad(
        ds_dminus, model.c_minus_raw, model.delta, upper=model.minus_cap * model.delta
    )

    # alpha splines, through the exponential: da/ds = a
    ds_da = np.sum((-phi_vals / (a4 * a4) + z * phi_prime / a4) * q, axis=(-2, -1))
    ds_dsa = ds_da * a  # (kept, channels)
    shifted = sigma - model.sigma_max / 2
    n_alpha = model.c_alpha_raw.shape[1]
    spacing = model.sigma_max / (n_alpha - 1)
    idx = np.clip(
        np.searchsorted(step_model.alpha_grid, shifted, side="right") - 1,
        0,
        n_alpha - 2,
    )
    frac = np.clip((shifted - step_model.alpha_grid[idx]) / spacing, 0.0, 1.0)
    galpha = np.zeros_like(model.c_alpha_raw)
    for i in range(galpha.shape[0]):
        np.add.at(galpha[i], idx, ds_dsa[:, i] * (1.0 - frac))
        np.add.at(galpha[i], idx + 1, ds_dsa[:, i] * frac)
    grads["c_alpha_raw"] = -galpha

    # kernels: two data paths plus the normalization scalar
    cot_x = phi_prime * q / nu
    cot_w = (phi_vals / a4) / nu
    path_x = stack.kernel_grads(xhat, cot_x)
    path_w = stack.kernel_grads(w, cot_w)
    ds_dnu = -(float(np.sum(cot_x * z)) + float(np.sum(cot_w * q)))
    kernel_grads = [
        gx + gw + ds_dnu * gn for gx, gw, gn in zip(path_x, path_w, nu_grads)
    ]
    grads["kernels"] = [-g for g in _zero_mean_grad(kernel_grads)]
    return loss, grads, aux


class _Adam:
    """Minimal Adam with the standard moment defaults."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = {}

    def update(self, key, value, grad, lr):
        grad = np.asarray(grad, dtype=float)
        m = self.m.get(key, np.zeros_like(grad))
        v = self.v.get(key, np.zeros_like(grad))
        t = self.t.get(key, 0) + 1
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.m[key], self.v[key], self.t[key] = m, v, t
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        return value - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _assemble(params, config, minus_cap, conv=None):
    stack = ConvStack(params["kernels"])
    if conv is None:
        conv = NormalizedConv(stack, 1.0, "dft-estimate")  # renormalized per step
    return WcrrModel(
        conv=conv,
        mu_raw=float(params["mu_raw"]),
        c_plus_raw=params["c_plus_raw"],
        c_minus_raw=params["c_minus_raw"],
        c_alpha_raw=params["c_alpha_raw"],
        delta=config.delta,
        sigma_max=config.sigma_max,
        minus_cap=minus_cap,
    )


def initial_parameters(config: TrainConfig):
    """Raw parameter dict for a fresh run (phi = -identity, constant alpha)."""
    rng = np.random.default_rng(config.seed)
    channels = tuple(config.channels)
    shapes = [(channels[0], 1)] + [
        (channels[i], channels[i - 1]) for i in range(1, len(channels))
    ]
    k = config.kernel_size
    m = config.num_knots - 1
    knots = (np.arange(config.num_knots) - m / 2) * config.delta
    return {
        "mu_raw": 1.0,
        "c_plus_raw": np.zeros(config.num_knots),
        "c_minus_raw": knots.copy(),
        "c_alpha_raw": np.full((channels[-1], ALPHA_KNOTS), config.alpha_init),
        "kernels": [1e-2 * rng.standard_normal((o, i, k, k)) for o, i in shapes],
    }


def train(dataset: PatchDataset, config: TrainConfig, checkpoint_dir=None):
    """Adam training loop; returns the exported model and the step log.

    The log holds one dict per step (loss, per-group learning rates, norm
    estimate, solver diagnostics); identical seeds reproduce it exactly.
    """
    rng = np.random.default_rng(config.seed)
    params = initial_parameters(config)
    adam = _Adam()
    minus_cap = 1.0 - config.slope_margin
    log = []
    for step in range(1, config.steps + 1):
        decay = config.lr_decay ** ((step - 1) // config.lr_decay_every)
        model = _assemble(params, config, minus_cap)
        batch = sample_batch(dataset, config, rng)
        loss, grads, aux = loss_and_grad(model, batch, config)
        rates = {
            "mu": config.lr_mu * decay,
            "conv": config.lr_conv * decay,
            "alpha": config.lr_alpha * decay,
            "splines": config.lr_splines * decay,
        }
        params["mu_raw"] = float(
            adam.update("mu_raw", params["mu_raw"], grads["mu_raw"], rates["mu"])
        )
        params["c_plus_raw"] = adam.update(
            "c_plus_raw", params["c_plus_raw"], grads["c_plus_raw"], rates["splines"]
        )
        params["c_minus_raw"] = adam.update(
            "c_minus_raw", params["c_minus_raw"], grads["c_minus_raw"], rates["splines"]
        )
        params["c_alpha_raw"] = adam.update(
            "c_alpha_raw", params["c_alpha_raw"], grads["c_alpha_raw"], rates["alpha"]
        )
        params["kernels"] = [
            adam.update(f"kernel{i}", kern, grad, rates["conv"])
            for i, (kern, grad) in enumerate(zip(params["kernels"], grads["kernels"]))
        ]
        log.append(
            {
                "step": step,
                "loss": loss,
                "kept": aux["kept"],
                "lr_mu": rates["mu"],
                "lr_conv": rates["conv"],
                "lr_alpha": rates["alpha"],
                "lr_splines": rates["splines"],
                "norm_estimate": aux["norm_estimate"],
                "forward_iters": aux["forward_iters"],
                "cg_iters": aux["cg_iters"],
            }
        )
        if (
            checkpoint_dir
            and config.checkpoint_every
            and step % config.checkpoint_every == 0
        ):
            from .checkpoint import save_model

            snapshot = export_model(params, config)
            save_model(snapshot, Path(checkpoint_dir) / f"step{step:06d}.wcrr")
    return export_model(params, config), log


def export_model(params, config: TrainConfig) -> WcrrModel:
    """Model with the firm power-method norm and the full slope cap."""
    stack = ConvStack(params["kernels"])
    conv = NormalizedConv.with_power_norm(
        stack, config.export_norm_size, config.export_norm_size,
        config.export_norm_iters,
    )
    return _assemble(params, config, minus_cap=1.0, conv=conv)


def write_training_log(log, path) -> None:
    import csv

    fields = [
        "step", "loss", "kept", "lr_mu", "lr_conv", "lr_alpha", "lr_splines",
        "norm_estimate", "forward_iters", "cg_iters",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(log)
