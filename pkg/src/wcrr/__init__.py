"""Weakly convex ridge regularization for denoising and inverse problems."""

from .checkpoint import load_model, save_model
from .conv import ConvStack, NormalizedConv, spectral_norm_dft, spectral_norm_power
from .metrics import psnr, ssim
from .operators import (
    CartesianMask,
    DenseOperator,
    Identity,
    MaskedFourier,
    MeasurementOp,
    Radon,
    make_cartesian_mask,
    simulate,
)
from .regularizer import WcrrModel
from .solvers import SolveOptions, SolveReport, objective, prox_denoise, sagd_solve
from .splines import LinearSpline, project_monotone_nonexpansive, symmetrize_odd
from .training import PatchDataset, TrainConfig, loss_and_grad, sample_batch, train
from .tuning import coarse_to_fine

__all__ = [
    "CartesianMask",
    "ConvStack",
    "DenseOperator",
    "Identity",
    "LinearSpline",
    "MaskedFourier",
    "MeasurementOp",
    "NormalizedConv",
    "PatchDataset",
    "Radon",
    "SolveOptions",
    "SolveReport",
    "TrainConfig",
    "WcrrModel",
    "coarse_to_fine",
    "load_model",
    "loss_and_grad",
    "make_cartesian_mask",
    "objective",
    "project_monotone_nonexpansive",
    "prox_denoise",
    "psnr",
    "sagd_solve",
    "sample_batch",
    "save_model",
    "simulate",
    "spectral_norm_dft",
    "spectral_norm_power",
    "ssim",
    "symmetrize_odd",
    "train",
]

__version__ = "0.1.0"
