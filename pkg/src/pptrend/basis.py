"""Spline basis on the within-period domain, monomial trend basis, and residue indexing.

The within-period basis is a clamped B-spline basis evaluated with the
triangular Cox-de Boor scheme.  The right endpoint belongs to the last knot
interval, so every row of the design matrix sums to one on the closed domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidDomainError, OutOfDomainError

__all__ = [
    "BasisSpec",
    "TrendSpec",
    "SeasonIndexer",
    "make_bspline_basis",
    "eval_basis",
    "spline_sup_bound",
    "eval_trend",
    "trend_matrix",
    "seasonal_index",
    "trend_residue",
]


@dataclass(frozen=True)
class BasisSpec:
    """Clamped B-spline basis on ``[L, U]``.

    ``knots`` is the full knot vector, boundary knots repeated
    ``degree + 1`` times.
    """

    domain: tuple
    degree: int
    knots: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def lower(self) -> float:
        return float(self.domain[0])

    @property
    def upper(self) -> float:
        return float(self.domain[1])

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knots[self.degree + 1 : len(self.knots) - self.degree - 1]

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values, i.e. the boundaries of the polynomial pieces."""
        return np.unique(self.knots)

    def __call__(self, u):
        return eval_basis(self, u)

    def __eq__(self, other):
        if not isinstance(other, BasisSpec):
            return NotImplemented
        return (
            tuple(map(float, self.domain)) == tuple(map(float, other.domain))
            and self.degree == other.degree
            and np.array_equal(self.knots, other.knots)
        )

    def __hash__(self):
        return hash((tuple(map(float, self.domain)), self.degree, self.knots.tobytes()))


def make_bspline_basis(
    domain: Sequence[float],
    degree: int,
    interior_knots: int = 0,
    knots: Optional[Sequence[float]] = None,
) -> BasisSpec:
    """Build a clamped B-spline basis with ``degree + 1 + interior_knots`` functions.

    Interior knots are equally spaced unless ``knots`` (interior positions
    only) is given explicitly.
    """
    lo, hi = (float(x) for x in domain)
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise InvalidDomainError(f"domain must satisfy L < U, got [{lo}, {hi}]")
    if int(degree) != degree or degree < 0:
        raise ConfigurationError(f"degree must be a nonnegative integer, got {degree}")
    degree = int(degree)
    if knots is None:
        if int(interior_knots) != interior_knots or interior_knots < 0:
            raise ConfigurationError(
                f"interior_knots must be a nonnegative integer, got {interior_knots}"
            )
        inner = np.linspace(lo, hi, int(interior_knots) + 2)[1:-1]
    else:
        inner = np.asarray(knots, dtype=float)
        if inner.size and (np.any(np.diff(inner) < 0) or inner[0] <= lo or inner[-1] >= hi):
            raise ConfigurationError("explicit interior knots must be sorted and inside (L, U)")
    full = np.concatenate([np.full(degree + 1, lo), inner, np.full(degree + 1, hi)])
    full.setflags(write=False)
    return BasisSpec(domain=(lo, hi), degree=degree, knots=full)


def _design_matrix(spec: BasisSpec, u: np.ndarray) -> np.ndarray:
    knots = spec.knots
    deg = spec.degree
    p = spec.p
    span = np.searchsorted(knots, u, side="right") - 1
    span = np.clip(span, deg, p - 1)

    nu = u.shape[0]
    vals = np.zeros((nu, deg + 1))
    vals[:, 0] = 1.0
    left = np.empty((nu, deg + 1))
    right = np.empty((nu, deg + 1))
    for j in range(1, deg + 1):
        left[:, j] = u - knots[span + 1 - j]
        right[:, j] = knots[span + j] - u
        saved = np.zeros(nu)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((nu, p))
    cols = span[:, None] - deg + np.arange(deg + 1)[None, :]
    np.put_along_axis(out, cols, vals, axis=1)
    return out


def eval_basis(spec: BasisSpec, u):
    """Evaluate the basis at ``u``.

    A scalar ``u`` gives a vector of length ``p``; an array gives the
    ``(len(u), p)`` design matrix.
    """
    arr = np.asarray(u, dtype=float)
    scalar = arr.ndim == 0
    flat = np.atleast_1d(arr).ravel()
    if flat.size and (
        not np.all(np.isfinite(flat))
        or flat.min() < spec.lower
        or flat.max() > spec.upper
    ):
        bad = flat[~((flat >= spec.lower) & (flat <= spec.upper))]
        raise OutOfDomainError(
            f"point {bad[0]!r} outside basis domain [{spec.lower}, {spec.upper}]"
        )
    mat = _design_matrix(spec, flat)
    return mat[0] if scalar else mat


def spline_sup_bound(spec: BasisSpec, coeffs) -> float:
    """Upper bound on ``sup_u coeffs @ beta(u)``.

    B-spline values are nonnegative and sum to one, so the spline is a convex
    combination of its coefficients and never exceeds the largest one.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.shape != (spec.p,):
        raise ConfigurationError(f"expected {spec.p} coefficients, got shape {c.shape}")
    return float(np.max(c))


def _residue(t, m):
    t = np.asarray(t)
    if np.any(t < 1):
        raise IndexError("time index must be >= 1")
    return (t - 1) % m + 1


def seasonal_index(t, d: int):
    """Season of period ``t``: ``((t - 1) mod d) + 1``."""
    if d < 1:
        raise ConfigurationError("seasonal period must be >= 1")
    res = _residue(t, d)
    return int(res) if np.ndim(res) == 0 else res


def trend_residue(t, r: int):
    """Position of ``t`` within the trend cycle, in ``1..r``."""
    if r < 1:
        raise ConfigurationError("trend period must be >= 1")
    res = _residue(t, r)
    return int(res) if np.ndim(res) == 0 else res


@dataclass(frozen=True)
class SeasonIndexer:
    d: int = 1
    r: Optional[int] = None

    def __post_init__(self):
        if self.d < 1:
            raise ConfigurationError("seasonal period d must be >= 1")
        if self.r is not None and (self.r < 1 or self.r % self.d):
            raise ConfigurationError(f"trend period r={self.r} must be a multiple of d={self.d}")

    @property
    def w(self) -> Optional[int]:
        return None if self.r is None else self.r // self.d

    def season(self, t):
        return seasonal_index(t, self.d)

    def residue(self, t):
        if self.r is None:
            raise ConfigurationError("trend period r is not set")
        return trend_residue(t, self.r)

    def cycle_position(self, i: int, j: int) -> int:
        """Index ``(i - 1) d + j`` of season ``j`` in the ``i``-th sub-cycle."""
        return (i - 1) * self.d + j


@dataclass(frozen=True)
class TrendSpec:
    """Monomial trend basis.

    ``mode="residue"`` uses ``((s-1), ..., (s-1)^q)`` with ``s = {t}_r`` so the
    trend vanishes at ``t = 1``; ``mode="normalized"`` uses ``(s, ..., s^q)``
    with ``s = t / (n + 1)``; ``mode="anchored"`` uses ``(s, ..., s^q)`` with
    ``s = (t - 1) / (n - 1)``, which vanishes at ``t = 1`` and maps the
    sample onto ``[0, 1]``.
    """

    q: int
    mode: str = "residue"
    r: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.q < 0:
            raise ConfigurationError("trend dimension q must be >= 0")
        if self.mode == "residue":
            if self.r is None or self.r < 1:
                raise ConfigurationError("residue trend mode needs a period r >= 1")
        elif self.mode == "normalized":
            if self.n is None or self.n < 1:
                raise ConfigurationError("normalized trend mode needs a series length n >= 1")
        elif self.mode == "anchored":
            if self.n is None or self.n < 2:
                raise ConfigurationError("anchored trend mode needs a series length n >= 2")
        else:
            raise ConfigurationError(f"unknown trend mode {self.mode!r}")

    def position(self, t):
        """Monomial argument ``s`` for period ``t``."""
        if self.mode == "residue":
            return trend_residue(t, self.r) - 1.0
        t = np.asarray(t, dtype=float)
        if np.any(t < 1):
            raise IndexError("time index must be >= 1")
        if self.mode == "anchored":
            return (t - 1.0) / (self.n - 1)
        return t / (self.n + 1)

    def from_position(self, s):
        """Basis at monomial argument ``s`` directly (e.g. ``s`` on ``[0, 1]``)."""
        s = np.asarray(s, dtype=float)
        powers = np.arange(1, self.q + 1)
        return s[..., None] ** powers


def eval_trend(spec: TrendSpec, t) -> np.ndarray:
    """Trend covariates ``b(t)``, a vector of length ``q``."""
    if np.ndim(t) != 0:
        raise ValueError("eval_trend takes a single time index; use trend_matrix")
    return spec.from_position(spec.position(t))


def trend_matrix(spec: TrendSpec, ts) -> np.ndarray:
    """Rows ``b(t)`` for each ``t`` in ``ts``, shape ``(len(ts), q)``."""
    ts = np.asarray(ts)
    return spec.from_position(spec.position(ts)).reshape(ts.shape[0], spec.q)
