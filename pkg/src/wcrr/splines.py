"""Linear splines on a uniform knot grid with constant extensions.

A spline is defined by its values ``coeffs[m]`` at the knots
``tau_m = (m - M/2) * delta`` for ``m = 0..M`` (M even), interpolated
linearly in between and extended by the end values outside the grid.
The module also provides the constraint machinery used to keep
activation splines monotone, non-expansive and odd: a clip/cumsum
projection onto the feasible slope set and an odd symmetrization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class LinearSpline:
    """Piecewise-linear function on ``M`` uniform knot intervals.

    Outside ``[tau_0, tau_M]`` the function is constant (``coeffs[0]``
    to the left, ``coeffs[M]`` to the right), so any primitive is
    affine there.
    """

    delta: float
    coeffs: np.ndarray
    knots: np.ndarray = field(init=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size < 3 or self.coeffs.size % 2 == 0:
            raise ValueError("coeffs must be a vector of odd length >= 3 (M even)")
        if not self.delta > 0:
            raise ValueError("delta must be > 0")
        m = self.coeffs.size - 1
        self.knots = (np.arange(m + 1) - m / 2) * self.delta

    @property
    def num_intervals(self) -> int:
        return self.coeffs.size - 1

    def value(self, t):
        """Evaluate the spline; constant outside the knot range."""
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.knots, self.coeffs)

    def derivative(self, t):
        """Piecewise-constant slope, right-continuous at knots, 0 outside the grid."""
        t = np.asarray(t, dtype=float)
        slopes = np.diff(self.coeffs) / self.delta
        idx = np.searchsorted(self.knots, t, side="right") - 1
        inside = (idx >= 0) & (idx < self.num_intervals)
        out = np.zeros(t.shape)
        out[inside] = slopes[idx[inside]]
        return out if out.ndim else float(out)

    def antiderivative(self, t):
        """The primitive anchored at 0: piecewise quadratic on the grid, affine outside."""
        t = np.asarray(t, dtype=float)
        c = self.coeffs
        m = self.num_intervals
        # cumulative integral from tau_0, trapezoid-exact for a linear interpolant
        knot_integrals = np.concatenate(
            ([0.0], np.cumsum((c[:-1] + c[1:]) * (self.delta / 2)))
        )
        slopes = np.diff(c) / self.delta

        idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, m - 1)
        dt = t - self.knots[idx]
        raw = knot_integrals[idx] + c[idx] * dt + 0.5 * slopes[idx] * dt * dt
        left = t < self.knots[0]
        right = t >= self.knots[-1]
        raw = np.where(left, c[0] * (t - self.knots[0]), raw)
        raw = np.where(right, knot_integrals[-1] + c[-1] * (t - self.knots[-1]), raw)
        # anchor: the center knot sits exactly at 0
        out = raw - knot_integrals[m // 2]
        return out if out.ndim else float(out)

    def interp_weights(self, t):
        """Indices and weights such that value(t) = sum of weights * coeffs[idx].

        Returns ``(idx, frac)`` with contributions ``1 - frac`` on ``idx``
        and ``frac`` on ``idx + 1``; queries outside the grid put all the
        weight on the end coefficient.
        """
        t = np.asarray(t, dtype=float)
        idx = np.clip(
            np.searchsorted(self.knots, t, side="right") - 1, 0, self.num_intervals - 1
        )
        frac = np.clip((t - self.knots[idx]) / self.delta, 0.0, 1.0)
        return idx, frac

    def value_backward(self, t, weights):
        """Gradient of sum(weights * value(t)) with respect to the coefficients.

        Each query splats its weight onto the two bracketing knots (onto a
        single end knot outside the grid, matching the constant extension).
        """
        idx, frac = self.interp_weights(t)
        idx, frac = idx.ravel(), frac.ravel()
        w = np.asarray(weights, dtype=float).ravel()
        n = self.coeffs.size
        grad = np.bincount(idx, w * (1.0 - frac), minlength=n)
        grad += np.bincount(idx + 1, w * frac, minlength=n)
        return grad

    def to_csv(self, path) -> None:
        """Write (knot, coefficient) pairs for plotting."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["knot", "value"])
            for tau, c in zip(self.knots, self.coeffs):
                writer.writerow([repr(float(tau)), repr(float(c))])


def project_monotone_nonexpansive(coeffs, delta, upper=None):
    """Project knot values onto {c : 0 <= c[m+1] - c[m] <= upper} preserving the mean.

    Finite differences are clipped to ``[0, upper]`` (``upper`` defaults to
    ``delta``, i.e. slopes in [0, 1]), re-accumulated, and shifted so the
    mean of the input is preserved. Feasible inputs are fixed points and
    the map is idempotent.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if upper is None:
        upper = delta
    clipped = np.clip(np.diff(coeffs), 0.0, upper)
    out = np.concatenate(([0.0], np.cumsum(clipped)))
    return out + (coeffs.mean() - out.mean())


def symmetrize_odd(coeffs, delta, upper=None):
    """Projected, odd-symmetrized knot values: o[m] = -o[M - m].

    Applies :func:`project_monotone_nonexpansive` first, then removes the
    even part; the result stays monotone and non-expansive because
    reversing a feasible vector negates its finite differences.
    """
    proj = project_monotone_nonexpansive(coeffs, delta, upper)
    return 0.5 * (proj - proj[::-1])


def project_monotone_nonexpansive_grad(grad_out, coeffs, delta, upper=None):
    """Chain rule through the projection evaluated at ``coeffs``.

    Clipped finite differences pass no gradient (boundary values count as
    unclipped); the mean-correction term routes the residual mass back to
    every input entry.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    grad_out = np.asarray(grad_out, dtype=float)
    if upper is None:
        upper = delta
    diffs = np.diff(coeffs)
    unclipped = (diffs >= 0.0) & (diffs <= upper)
    n = coeffs.size
    total = grad_out.sum()
    grad_c = np.full(n, total / n)
    grad_s = grad_out - total / n
    # s[m] = sum_{j < m} clipped[j], so each clipped diff collects the tail
    tail = np.cumsum(grad_s[::-1])[::-1]
    grad_u = tail[1:] * unclipped
    grad_c[:-1] -= grad_u
    grad_c[1:] += grad_u
    return grad_c


def symmetrize_odd_grad(grad_out, coeffs, delta, upper=None):
    """Chain rule through :func:`symmetrize_odd` evaluated at ``coeffs``."""
    grad_out = np.asarray(grad_out, dtype=float)
    inner = 0.5 * (grad_out - grad_out[::-1])
    return project_monotone_nonexpansive_grad(inner, coeffs, delta, upper)
