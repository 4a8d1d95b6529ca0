"""Reference implementations and data builders shared by the tests."""

from __future__ import annotations

import numpy as np

from pptrend.basis import SeasonIndexer, eval_basis, trend_matrix
from pptrend.model import PatternSeries
from pptrend.simulate import sample_pattern

THETA0 = np.array([-5.45, -4.96, -0.13, -4.14, -1.15, -5.52])
TAU0 = np.array([0.508, 0.331, -0.113, 0.270, -0.056, 0.459])
THETA_STAR = np.array([-5.196, -4.7945, -0.1865, -4.005, -1.178, -5.2905])

# 10^6-point midpoint sums on [0, 24]
INT_EXP_MU0 = 1.6970563828928602
INT_EXP_THETA_STAR = 1.7853536010734485
L2_NORM_MU0 = 15.506142600042445


def textbook_bspline(knots, i, k, u):
    """``B_{i,k}(u)`` by the plain recursive definition, 0/0 read as 0.

    The last nonempty interval is closed on the right.
    """
    knots = np.asarray(knots, dtype=float)
    if k == 0:
        lo, hi = knots[i], knots[i + 1]
        if lo <= u < hi:
            return 1.0
        last = np.flatnonzero(knots < knots[-1]).max()
        return 1.0 if (u == knots[-1] and i == last) else 0.0
    out = 0.0
    den = knots[i + k] - knots[i]
    if den > 0:
        out += (u - knots[i]) / den * textbook_bspline(knots, i, k - 1, u)
    den = knots[i + k + 1] - knots[i + 1]
    if den > 0:
        out += (knots[i + k + 1] - u) / den * textbook_bspline(knots, i + 1, k - 1, u)
    return out


def poisson_series(rng, basis, theta_rows, eta, trend_spec, n, d=None):
    """Series of exact Poisson patterns with log-intensity ``theta_j @ beta + eta @ b(t)``."""
    theta_rows = np.atleast_2d(theta_rows)
    d = theta_rows.shape[0] if d is None else d
    eta = np.asarray(eta, dtype=float)
    times = np.arange(1, n + 1)
    offsets = trend_matrix(trend_spec, times) @ eta if trend_spec.q else np.zeros(n)
    pats = [
        sample_pattern((theta_rows[(t - 1) % d], offsets[t - 1]), basis, rng)
        for t in times
    ]
    return PatternSeries(pats, SeasonIndexer(d), trend_spec)


def random_params(rng, d, p, q, scale=1.0, eta_scale=None):
    from pptrend.model import Params

    eta_scale = scale if eta_scale is None else eta_scale
    return Params(scale * rng.uniform(-1, 1, (d, p)), eta_scale * rng.uniform(-1, 1, q))


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def design(basis, u):
    return eval_basis(basis, np.atleast_1d(u))
