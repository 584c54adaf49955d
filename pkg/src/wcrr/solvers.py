"""Iterative solvers for the denoising and inverse-problem objectives.

Two accelerated gradient schemes share the Nesterov momentum sequence
t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2:

* :func:`prox_denoise` minimizes the convex objective
  0.5 ||x - y||^2 + R(x) with the gradient-based restart rule (reset the
  momentum whenever the gradient has positive inner product with the
  last step).
* :func:`sagd_solve` minimizes 0.5 ||Hx - y||^2 + lambda R(x), which is
  only lambda-weakly convex; the extrapolated point is accepted only if
  it passes the safeguard
  <grad(z_k), z_k - z_{k-1}> + (a lambda / 2) ||z_k - z_{k-1}||^2 <= 0,
  otherwise the iterate falls back to a plain gradient step and the
  momentum restarts. The recorded objective values at the z-iterates are
  then non-increasing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

_TINY = 1e-300


@dataclass
class SolveOptions:
    """Stopping and safeguard settings shared by both solvers.

    ``tol`` is the relative iterate-change threshold (0 disables it and
    runs to ``max_iters``); ``a`` is the safeguard slack, > 1.
    """

    tol: float = 1e-4
    max_iters: int = 2000
    a: float = 2.0
    step_override: float | None = None
    record_objective: bool = True

    def __post_init__(self):
        if self.tol < 0:
            raise ValueError("tol must be >= 0")
        if self.a <= 1:
            raise ValueError("safeguard slack a must be > 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SolveReport:
    """Per-iteration trace of a solver run."""

    iterations: int
    objective_trace: np.ndarray
    grad_norm_trace: np.ndarray
    restart_count: int
    stop_reason: str  # 'tolerance' | 'max_iters'
    restart_flags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    z_change_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "objective", "grad_norm", "restart"])
            for k in range(self.iterations):
                obj = self.objective_trace[k] if k < len(self.objective_trace) else ""
                writer.writerow(
                    [
                        k + 1,
                        repr(float(obj)) if obj != "" else "",
                        repr(float(self.grad_norm_trace[k])),
                        int(self.restart_flags[k]) if len(self.restart_flags) else 0,
                    ]
                )


def denoise_objective(model, y, x, sigma) -> float:
    """0.5 ||x - y||^2 + R(x)."""
    return 0.5 * float(np.sum((x - y) ** 2)) + model.energy(x, sigma)


def prox_denoise(model, y, sigma, opts: SolveOptions | None = None, x0=None):
    """Proximal denoiser: restarted AGD on the convex denoising objective.

    The step size is 1 / (1 + max(1, mu)), a bound on the inverse gradient
    Lipschitz constant, and the iteration starts at the noisy image.
    Returns ``(solution, SolveReport)``.
    """
    opts = opts or SolveOptions()
    y = np.asarray(y, dtype=float)
    x = y.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
    x_prev = x.copy()
    step = 1.0 / (1.0 + max(1.0, model.mu))
    t_prev = t = 1.0
    objective, grad_norms, restarts = [], [], []
    restart_count = 0
    stop_reason = "max_iters"
    iterations = opts.max_iters
    for k in range(1, opts.max_iters + 1):
        z = x + ((t_prev - 1.0) / t) * (x - x_prev)
        g = (z - y) + model.grad(z, sigma)
        x_new = z - step * g
        restarted = float(np.vdot(g, x_new - x)) > 0.0
        if opts.record_objective:
            objective.append(denoise_objective(model, y, x_new, sigma))
        grad_norms.append(float(np.linalg.norm(g)))
        restarts.append(restarted)
        if restarted:
            restart_count += 1
            t_prev = t = 1.0
        else:
            t_prev, t = t, (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        rel = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), _TINY)
        x_prev, x = x, x_new
        if rel <= opts.tol:
            stop_reason = "tolerance"
            iterations = k
            break
    report = SolveReport(
        iterations=iterations,
        objective_trace=np.array(objective),
        grad_norm_trace=np.array(grad_norms),
        restart_count=restart_count,
        stop_reason=stop_reason,
        restart_flags=np.array(restarts, dtype=bool),
    )
    return x, report


def prox_denoise_batch(model, noisy, sigma, tol=1e-4, max_iters=2000):
    """Restarted AGD on a batch of denoising problems at once.

    ``noisy`` is (n, h, w) and ``sigma`` scalar or (n,); every element
    keeps its own momentum and restart state. Returns
    ``(solutions, converged_flags, iterations)`` without traces; use
    :func:`prox_denoise` when a report is needed.
    """
    noisy = np.asarray(noisy, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), noisy.shape[:1])
    step = 1.0 / (1.0 + max(1.0, model.mu))
    x = noisy.copy()
    x_prev = noisy.copy()
    n = noisy.shape[0]
    t = np.ones(n)
    t_prev = np.ones(n)
    rel = np.full(n, np.inf)
    iters = 0
    for k in range(1, max_iters + 1):
        iters = k
        coef = ((t_prev - 1.0) / t)[:, None, None]
        z = x + coef * (x - x_prev)
        g = (z - noisy) + model.grad(z, sigma)
        x_new = z - step * g
        restart = np.sum(g * (x_new - x), axis=(1, 2)) > 0.0
        t_next = np.where(restart, 1.0, (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0)
        t_prev = np.where(restart, 1.0, t)
        t = t_next
        norms = np.sqrt(np.sum((x_new - x) ** 2, axis=(-2, -1)))
        base = np.sqrt(np.sum(x * x, axis=(-2, -1)))
        rel = norms / np.maximum(base, _TINY)
        x_prev, x = x, x_new
        if np.all(rel <= tol):
            break
    return x, rel <= tol, iters


def objective(op, y, lam, model, sigma, x) -> float:
    """Inverse-problem objective 0.5 ||Hx - y||^2 + lambda R(x)."""
    residual = op.apply(x) - y
    return 0.5 * float(np.sum(residual**2)) + lam * model.energy(x, sigma)


def sagd_solve(
    op,
    y,
    lam,
    model,
    sigma,
    x0=None,
    opts: SolveOptions | None = None,
):
    """Safeguarded AGD for the lambda-weakly convex objective.

    The gradient step length is 1/L with L = ||H||^2 + lambda * max(mu, 1)
    (||H|| from a 200-step seeded power method) unless ``step_override``
    is given. Momentum extrapolation is kept only when the safeguard
    certifies a sufficient objective decrease; otherwise the iterate
    restarts from the plain gradient point with t reset to 1. Returns
    ``(solution, SolveReport)`` whose objective trace (of the z-iterates)
    is non-increasing.
    """
    if lam <= 0:
        raise ValueError("lambda must be > 0")
    opts = opts or SolveOptions()
    y = np.asarray(y, dtype=float)
    x = (
        np.zeros(op.in_shape)
        if x0 is None
        else np.asarray(x0, dtype=float).copy()
    )
    if opts.step_override is not None:
        if opts.step_override <= 0:
            raise ValueError("step_override must be positive")
        lip = 1.0 / opts.step_override
    else:
        lip = op.norm() ** 2 + lam * model.lipschitz_bound()

    def grad_j(v):
        return op.adjoint(op.apply(v) - y) + lam * model.grad(v, sigma)

    x_prev = x.copy()
    z_prev = x.copy()
    t_prev = t = 1.0
    objective_trace, grad_norms, restarts, z_changes = [], [], [], []
    restart_count = 0
    stop_reason = "max_iters"
    iterations = opts.max_iters
    for k in range(1, opts.max_iters + 1):
        z = x + ((t_prev - 1.0) / t) * (x - x_prev)
        g = grad_j(z)
        dz = z - z_prev
        crit = float(np.vdot(g, dz)) + 0.5 * opts.a * lam * float(np.sum(dz * dz))
        restarted = crit > 0.0
        if restarted:
            restart_count += 1
            z = x
            t_prev = t = 1.0
            g = grad_j(z)
            dz = z - z_prev
        if opts.record_objective:
            j_z = objective(op, y, lam, model, sigma, z)
            if not np.isfinite(j_z):
                raise RuntimeError(
                    f"objective became non-finite at iteration {k} "
                    f"(step 1/L = {1.0 / lip:.3e}); check the scaling of the problem"
                )
            objective_trace.append(j_z)
        grad_norms.append(float(np.linalg.norm(g)))
        restarts.append(restarted)
        z_changes.append(float(np.linalg.norm(dz)))
        x_new = z - g / lip
        t_next = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        rel = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), _TINY)
        x_prev, x = x, x_new
        z_prev = z
        t_prev, t = t, t_next
        if rel <= opts.tol and opts.tol > 0:
            stop_reason = "tolerance"
            iterations = k
            break
    report = SolveReport(
        iterations=iterations,
        objective_trace=np.array(objective_trace),
        grad_norm_trace=np.array(grad_norms),
        restart_count=restart_count,
        stop_reason=stop_reason,
        restart_flags=np.array(restarts, dtype=bool),
        z_change_trace=np.array(z_changes),
    )
    return x, report
