"""Coarse-to-fine search for the reconstruction parameters (lambda, sigma)."""

from __future__ import annotations

import numpy as np


def coarse_to_fine(
    evaluate,
    lam_bounds=(1e-3, 1e1),
    sigma_bounds=(1.0 / 255.0, 30.0 / 255.0),
    grid_size=4,
    rounds=3,
):
    """Maximize ``evaluate(lam, sigma)`` on nested logarithmic grids.

    The initial grid spans the given bounds; each refinement round halves
    the log-span around the incumbent. Ties are broken toward the
    smallest lambda, then the smallest sigma. Returns
    ``(lam, sigma, score, trials)`` with ``trials`` the list of evaluated
    ``(lam, sigma, score)`` triples in order.
    """
    full_l = tuple(np.log10(v) for v in lam_bounds)
    full_s = tuple(np.log10(v) for v in sigma_bounds)
    if full_l[1] < full_l[0] or full_s[1] < full_s[0]:
        raise ValueError("bounds must be increasing")
    lo_l, hi_l = full_l
    lo_s, hi_s = full_s
    cache = {}
    trials = []
    best = None  # (score, lam, sigma)
    for _ in range(rounds + 1):
        lams = np.logspace(lo_l, hi_l, grid_size)
        sigmas = np.logspace(lo_s, hi_s, grid_size)
        for lam in lams:
            for sigma in sigmas:
                key = (float(lam), float(sigma))
                if key not in cache:
                    cache[key] = float(evaluate(*key))
                    trials.append((key[0], key[1], cache[key]))
                score = cache[key]
                candidate = (score, -key[0], -key[1])
                if best is None or candidate > (best[0], -best[1], -best[2]):
                    best = (score, key[0], key[1])
        # halve the spans around the incumbent, staying inside the bounds
        lo_l, hi_l = _shrink(np.log10(best[1]), hi_l - lo_l, full_l)
        lo_s, hi_s = _shrink(np.log10(best[2]), hi_s - lo_s, full_s)
    return best[1], best[2], best[0], trials


def _shrink(center, width, full):
    half = width / 4
    lo = max(center - half, full[0])
    hi = min(lo + 2 * half, full[1])
    return max(hi - 2 * half, full[0]), hi
