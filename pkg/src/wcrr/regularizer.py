"""Weakly convex ridge regularizer with noise-level conditioning.

The energy is a sum of per-channel ridge potentials applied to the
responses of a unit-norm convolution operator W:

    R(x) = sum_{i,k} alpha_i(sigma)^-2 * psi(alpha_i(sigma) * (W x)_{i,k})

where psi is the shared profile (the primitive of the activation
phi = mu * phi_plus - phi_minus built from two constrained linear
splines) and alpha_i(sigma) = exp(s_i(sigma)) / (sigma + eps) rescales
it per channel and noise level. With ||W|| = 1 the slopes of phi bound
the weak-convexity modulus: every Hessian eigenvalue is >= -s_inf with
s_inf = max(0, -min interval slope of phi) <= 1 by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .conv import ConvStack, NormalizedConv
from .splines import LinearSpline, symmetrize_odd

SIGMA_MAX_DEFAULT = 30.0 / 255.0
ALPHA_KNOTS = 11


@dataclass(eq=False)
class WcrrModel:
    """All learnable parameters plus fixed hyperparameters.

    Raw parameters are unconstrained; constraints live in the read path:
    spline coefficients pass through the monotone/non-expansive projection
    and odd symmetrization, mu is clamped to [0, inf), kernels are made
    zero-mean by the stack, and the alpha splines enter through an
    exponential. ``minus_cap`` (< 1 during training) limits the slopes of
    phi_minus so that I + H_R stays invertible for implicit
    differentiation; exported models use the full cap of 1.
    """

    conv: NormalizedConv
    mu_raw: float
    c_plus_raw: np.ndarray
    c_minus_raw: np.ndarray
    c_alpha_raw: np.ndarray
    delta: float = 2e-3
    sigma_max: float = SIGMA_MAX_DEFAULT
    epsilon: float = 1e-5
    minus_cap: float = 1.0

    def __post_init__(self):
        self.c_plus_raw = np.asarray(self.c_plus_raw, dtype=float)
        self.c_minus_raw = np.asarray(self.c_minus_raw, dtype=float)
        self.c_alpha_raw = np.atleast_2d(np.asarray(self.c_alpha_raw, dtype=float))
        if self.c_plus_raw.shape != self.c_minus_raw.shape:
            raise ValueError("c_plus and c_minus must have the same length")
        if self.c_alpha_raw.shape[0] != self.conv.num_channels:
            raise ValueError("one alpha spline per channel is required")
        if not 0 < self.minus_cap <= 1:
            raise ValueError("minus_cap must lie in (0, 1]")

    # -- derived parameters (read path) --------------------------------

    @property
    def mu(self) -> float:
        return max(float(self.mu_raw), 0.0)

    @property
    def num_knots(self) -> int:
        return self.c_plus_raw.size

    @cached_property
    def plus_spline(self) -> LinearSpline:
        return LinearSpline(self.delta, symmetrize_odd(self.c_plus_raw, self.delta))

    @cached_property
    def minus_spline(self) -> LinearSpline:
        coeffs = symmetrize_odd(
            self.c_minus_raw, self.delta, upper=self.minus_cap * self.delta
        )
        return LinearSpline(self.delta, coeffs)

    @cached_property
    def alpha_grid(self) -> np.ndarray:
        # 11 uniform knots on [0, sigma_max], stored centered like any spline
        n = self.c_alpha_raw.shape[1]
        return (np.arange(n) - (n - 1) / 2) * (self.sigma_max / (n - 1))

    def alpha(self, sigma):
        """Per-channel scaling alpha_i(sigma) = exp(s_i(sigma)) / (sigma + eps).

        ``sigma`` may be a scalar or a batch vector; the result has a
        trailing channel axis. Strictly positive for any sigma >= 0.
        """
        sig = np.asarray(sigma, dtype=float)
        shifted = sig - self.sigma_max / 2
        vals = np.stack(
            [np.interp(shifted, self.alpha_grid, c) for c in self.c_alpha_raw],
            axis=-1,
        )
        return np.exp(vals) / (sig[..., None] + self.epsilon)

    # -- activation, profile and their derivatives ---------------------

    def phi(self, t):
        """Base activation mu * phi_plus - phi_minus (odd, slopes in [-1, mu])."""
        return self.mu * self.plus_spline.value(t) - self.minus_spline.value(t)

    def phi_prime(self, t):
        """Piecewise-constant slope of phi, right-continuous at knots."""
        return self.mu * self.plus_spline.derivative(t) - self.minus_spline.derivative(t)

    def phi_plus(self, t):
        return self.plus_spline.value(t)

    def psi(self, t):
        """Shared profile: the primitive of phi with psi(0) = 0."""
        return (
            self.mu * self.plus_spline.antiderivative(t)
            - self.minus_spline.antiderivative(t)
        )

    # -- energy, gradient, Hessian-vector product -----------------------

    def _scaled_responses(self, x, sigma):
        z = self.conv.forward(x)
        a = self.alpha(sigma)[..., None, None]
        return z, a

    def energy(self, x, sigma):
        """R(x); a scalar for a single image, a vector for a batch."""
        z, a = self._scaled_responses(x, sigma)
        vals = np.sum(self.psi(a * z) / (a * a), axis=(-3, -2, -1))
        return float(vals) if vals.ndim == 0 else vals

    def grad(self, x, sigma):
        """Gradient of the energy; Lipschitz with constant max(mu, 1)."""
        z, a = self._scaled_responses(x, sigma)
        return self.conv.adjoint(self.phi(a * z) / a)

    def hvp(self, x, u, sigma):
        """Hessian-vector product H_R(x) u (symmetric in u)."""
        return self.hvp_operator(x, sigma)(u)

    def hvp_operator(self, x, sigma):
        """Closure computing u -> H_R(x) u with the multiplier cached."""
        z, a = self._scaled_responses(x, sigma)
        multiplier = self.phi_prime(a * z)

        def apply(u):
            return self.conv.adjoint(multiplier * self.conv.forward(u))

        return apply

    # -- certified bounds -----------------------------------------------

    def weak_convexity_bound(self) -> float:
        """s_inf: exact scan of the interval slopes of phi; always <= 1."""
        slopes = (
            self.mu * np.diff(self.plus_spline.coeffs)
            - np.diff(self.minus_spline.coeffs)
        ) / self.delta
        return max(0.0, float(-slopes.min()))

    def lipschitz_bound(self) -> float:
        """Bound on Lip(grad R) for unit-norm W."""
        return max(self.mu, 1.0)

    # -- construction ----------------------------------------------------

    @classmethod
    def initial(
        cls,
        channels=(4, 8, 60),
        kernel_size=5,
        seed=0,
        alpha_init=5.0,
        delta=2e-3,
        num_knots=101,
        sigma_max=SIGMA_MAX_DEFAULT,
        epsilon=1e-5,
        kernel_scale=1e-2,
        norm_size=40,
        norm_iters=1000,
        minus_cap=1.0,
    ) -> "WcrrModel":
        """Standard initialization: phi = -identity on the grid.

        c_plus starts at zero, c_minus at the knot ramp, the alpha splines
        at a constant, and the kernels at small seeded Gaussian noise
        normalized by a power-method estimate.
        """
        rng = np.random.default_rng(seed)
        shapes = [(channels[0], 1)] + [
            (channels[i], channels[i - 1]) for i in range(1, len(channels))
        ]
        stack = ConvStack(
            [
                kernel_scale * rng.standard_normal((o, i, kernel_size, kernel_size))
                for o, i in shapes
            ]
        )
        conv = NormalizedConv.with_power_norm(stack, norm_size, norm_size, norm_iters)
        m = num_knots - 1
        knots = (np.arange(num_knots) - m / 2) * delta
        return cls(
            conv=conv,
            mu_raw=1.0,
            c_plus_raw=np.zeros(num_knots),
            c_minus_raw=knots,
            c_alpha_raw=np.full((channels[-1], ALPHA_KNOTS), float(alpha_init)),
            delta=delta,
            sigma_max=sigma_max,
            epsilon=epsilon,
            minus_cap=minus_cap,
        )

    def with_exported_norm(self, size=64, iters=1000) -> "WcrrModel":
        """Copy with a firm power-method norm and the full slope cap."""
        conv = NormalizedConv.with_power_norm(self.conv.stack, size, size, iters)
        return replace(self, conv=conv, minus_cap=1.0)
