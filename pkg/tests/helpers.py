"""Shared builders and oracles for the test suite."""

import numpy as np

from wcrr.conv import ConvStack, NormalizedConv
from wcrr.regularizer import WcrrModel


def random_stack(rng, channels=(2, 3, 4), k=3, scale=1.0):
    shapes = [(channels[0], 1)] + [
        (channels[i], channels[i - 1]) for i in range(1, len(channels))
    ]
    return ConvStack([scale * rng.standard_normal((o, i, k, k)) for o, i in shapes])


def random_model(
    seed,
    channels=(2, 3, 4),
    k=3,
    num_knots=21,
    delta=2e-3,
    alpha_loc=1.0,
    sigma_max=30 / 255,
    norm_size=16,
    norm_iters=300,
    minus_cap=1.0,
):
    """Random constrained model with a firm (converged) power norm."""
    rng = np.random.default_rng(seed)
    stack = random_stack(rng, channels, k)
    conv = NormalizedConv.with_power_norm(stack, norm_size, norm_size, norm_iters)
    return WcrrModel(
        conv=conv,
        mu_raw=rng.uniform(0.2, 2.0),
        c_plus_raw=rng.standard_normal(num_knots) * delta,
        c_minus_raw=rng.standard_normal(num_knots) * delta,
        c_alpha_raw=alpha_loc + 0.3 * rng.standard_normal((channels[-1], 11)),
        delta=delta,
        sigma_max=sigma_max,
        minus_cap=minus_cap,
    )


def fd_friendly_model(seed, sigma_ref=0.06, delta=0.05, num_knots=21):
    """Random model tuned for finite-difference checks.

    The alpha splines sit near log(sigma_ref + eps) so alpha(sigma_ref) is
    O(1), and the wide knot spacing keeps scaled responses away from knots
    relative to the difference step.
    """
    rng = np.random.default_rng(seed)
    stack = random_stack(rng, (2, 3, 4), 3)
    conv = NormalizedConv.with_power_norm(stack, 16, 16, 300)
    loc = np.log(sigma_ref + 1e-5)
    return WcrrModel(
        conv=conv,
        mu_raw=rng.uniform(0.2, 2.0),
        c_plus_raw=rng.standard_normal(num_knots) * delta,
        c_minus_raw=rng.standard_normal(num_knots) * delta,
        c_alpha_raw=loc + 0.3 * rng.standard_normal((4, 11)),
        delta=delta,
        sigma_max=30 / 255,
    )


def smallest_hessian_eigenvalue(model, x, sigma, iters=300, seed=0, block=2):
    """Shifted power iteration: lambda_min(H_R(x)) via the PSD map c*I - H_R.

    The block rides through the Hessian-vector product as a batch; block 2
    covers the paired eigenvalues of convolution operators.
    """
    shift = model.lipschitz_bound()
    hvp = model.hvp_operator(x, sigma)
    rng = np.random.default_rng(seed)
    v = _orth(rng.standard_normal((block,) + x.shape))
    for _ in range(iters):
        v = _orth(shift * v - hvp(v))
    av = shift * v - hvp(v)
    small = v.reshape(block, -1) @ av.reshape(block, -1).T
    lam = np.linalg.eigvalsh(0.5 * (small + small.T)).max()
    return shift - lam


def _orth(block):
    q, _ = np.linalg.qr(block.reshape(block.shape[0], -1).T)
    return q.T.reshape(block.shape)


def clearance(model, x, sigma, direction=None, step=1e-5):
    """Smallest distance of the scaled responses to a knot, in step units.

    Used to resample finite-difference probes so no response crosses a
    slope break inside the difference stencil.
    """
    z = model.conv.forward(x)
    a = model.alpha(sigma)[..., None, None]
    t = a * z
    knots = model.plus_spline.knots
    dist = np.abs(t[..., None] - knots).min(axis=-1)
    if direction is None:
        speed = np.abs(a) * 1.0
    else:
        speed = np.abs(a * model.conv.forward(direction))
    return float((dist / np.maximum(speed * step, 1e-300)).min())
