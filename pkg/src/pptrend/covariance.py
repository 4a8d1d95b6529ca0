"""Sandwich covariance of the working-likelihood estimator and pointwise bands.

Parameter vectors are ordered ``(theta_1, ..., theta_d, eta)``; block ``j``
of a ``(dp + q)`` square matrix means rows/columns ``j*p .. (j+1)*p`` for
seasons and the trailing ``q`` rows/columns for the trend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.stats import norm

from .basis import BasisSpec, TrendSpec, eval_basis, eval_trend, seasonal_index, trend_matrix
from .errors import ConfigurationError, DimensionError, SingularInformationError
from .model import FitResult, PatternSeries, day_scores
from .quadrature import QuadGrid, basis_grid, moments

__all__ = [
    "BlockMap",
    "SandwichParts",
    "TrendAverages",
    "RankOneKernel",
    "trend_averages",
    "plug_in_W",
    "empirical_V",
    "sandwich",
    "sandwich_parts",
    "theoretical_VW",
    "normal_quantile",
    "band_trend",
    "band_intensity",
]


@dataclass(frozen=True)
class BlockMap:
    d: int
    p: int
    q: int

    @property
    def dim(self) -> int:
        return self.d * self.p + self.q

    def season(self, j: int) -> slice:
        """Slice of season ``j`` (1-based)."""
        if not 1 <= j <= self.d:
            raise IndexError(f"season must be in 1..{self.d}, got {j}")
        return slice((j - 1) * self.p, j * self.p)

    @property
    def trend(self) -> slice:
        return slice(self.d * self.p, self.dim)

    def block(self, k: int) -> slice:
        """Block ``k`` in ``1..d+1``; ``d + 1`` is the trend block."""
        return self.trend if k == self.d + 1 else self.season(k)

    def name(self, k: int) -> str:
        return "eta" if k == self.d + 1 else f"theta_{k}"

    def offsets(self):
        return [(j - 1) * self.p for j in range(1, self.d + 2)]


@dataclass(eq=False)
class SandwichParts:
    V: np.ndarray
    W: np.ndarray
    Omega: np.ndarray
    block_map: BlockMap


@dataclass(eq=False)
class TrendAverages:
    """Per-season averages of ``exp(c)``, ``exp(2c)`` against ``1``, ``b`` and ``b b^T``.

    Arrays are indexed by season first: ``e1[j]`` is the average of
    ``exp(c(t))`` over the days of season ``j + 1``, ``s1[j]`` of
    ``exp(c(t)) b(t)`` and ``S1[j]`` of ``exp(c(t)) b(t) b(t)^T``; the
    ``*2`` versions use ``exp(2 c(t))``.
    """

    e1: np.ndarray
    e2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    S1: np.ndarray
    S2: np.ndarray

    @property
    def d(self) -> int:
        return self.e1.shape[0]


def trend_averages(eta, trend_spec: TrendSpec, d: int, times) -> TrendAverages:
    """Season-wise averages of trend functionals over the periods in ``times``.

    For a residue trend with ``times = 1..r`` these are the cycle averages
    over ``i = 1..w`` of the sub-cycle positions ``(i - 1) d + j``.
    """
    eta = np.asarray(eta, dtype=float)
    times = np.asarray(times)
    bt = trend_matrix(trend_spec, times)
    c = bt @ eta
    season = seasonal_index(times, d) - 1
    q = trend_spec.q
    out = {k: [] for k in ("e1", "e2", "s1", "s2", "S1", "S2")}
    for j in range(d):
        rows = season == j
        if not rows.any():
            raise ConfigurationError(f"no periods fall in season {j + 1}")
        b = bt[rows]
        for suffix, wts in (("1", np.exp(c[rows])), ("2", np.exp(2 * c[rows]))):
            k = wts.shape[0]
            out["e" + suffix].append(wts.mean())
            out["s" + suffix].append(wts @ b / k)
            out["S" + suffix].append((b * wts[:, None]).T @ b / k)
    return TrendAverages(
        e1=np.array(out["e1"]),
        e2=np.array(out["e2"]),
        s1=np.array(out["s1"]).reshape(d, q),
        s2=np.array(out["s2"]).reshape(d, q),
        S1=np.array(out["S1"]).reshape(d, q, q),
        S2=np.array(out["S2"]).reshape(d, q, q),
    )


def _assemble_W(mom, avg: TrendAverages, bm: BlockMap) -> np.ndarray:
    d = bm.d
    W = np.zeros((bm.dim, bm.dim))
    for j in range(1, d + 1):
        m, sl = mom[j - 1], bm.season(j)
        W[sl, sl] = -avg.e1[j - 1] * m.Sigma / d
        cross = -np.outer(m.sigma, avg.s1[j - 1]) / d
        W[sl, bm.trend] = cross
        W[bm.trend, sl] = cross.T
        W[bm.trend, bm.trend] -= m.e * avg.S1[j - 1] / d
    return W


def plug_in_W(fit: FitResult, series: PatternSeries, basis: BasisSpec = None, grid: QuadGrid = None) -> np.ndarray:
    """Information matrix ``W`` with fitted intensities and trend substituted."""
    fit.require_converged()
    basis = fit.basis if basis is None else basis
    grid = basis_grid(basis) if grid is None else grid
    bm = BlockMap(fit.d, basis.p, fit.params.q)
    mom = [moments(basis, grid, th) for th in fit.params.theta]
    avg = trend_averages(fit.params.eta, series.trend_spec, series.d, series.times)
    return _assemble_W(mom, avg, bm)


def empirical_V(series: PatternSeries, fit: FitResult, basis: BasisSpec = None, grid: QuadGrid = None) -> np.ndarray:
    """Mean outer product of the per-day scores at the fitted parameters."""
    fit.require_converged()
    basis = fit.basis if basis is None else basis
    grid = basis_grid(basis) if grid is None else grid
    psi = day_scores(series, fit.params, grid, basis)
    V = psi.T @ psi / series.n
    return (V + V.T) / 2.0


def sandwich(V, W, block_map: Optional[BlockMap] = None, rcond_min: float = 1e-12) -> np.ndarray:
    """``W^{-1} V W^{-1}`` via a Cholesky factorization of the scaled ``-W``.

    Raises :class:`SingularInformationError` when ``-W`` is not positive
    definite or its diagonally scaled reciprocal condition number is below
    ``rcond_min``; the error names the block carrying the weakest direction
    when ``block_map`` is given.
    """
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape != W.shape or W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"V {V.shape} and W {W.shape} must be equal square matrices")
    A = -(W + W.T) / 2.0
    diag = np.diag(A)

    def block_of(index):
        if block_map is None:
            return None
        for k in range(1, block_map.d + 2):
            sl = block_map.block(k)
            if sl.start <= index < sl.stop:
                return block_map.name(k)

    if np.any(diag <= 0):
        idx = int(np.argmin(diag))
        name = block_of(idx)
        raise SingularInformationError(
            "information matrix has a nonpositive diagonal entry"
            + (f" in block {name}" if name else f" at index {idx}"),
            block=name,
        )
    scale = 1.0 / np.sqrt(diag)
    As = A * scale[:, None] * scale[None, :]
    vals, vecs = np.linalg.eigh(As)
    if vals[0] <= rcond_min * vals[-1]:
        idx = int(np.argmax(np.abs(vecs[:, 0])))
        name = block_of(idx)
        raise SingularInformationError(
            f"information matrix is singular (reciprocal condition {vals[0] / vals[-1]:.3g})"
            + (f"; weakest direction lies in block {name}" if name else ""),
            block=name,
        )
    c = scipy.linalg.cho_factor(As, lower=True)
    Vs = V * scale[:, None] * scale[None, :]
    X = scipy.linalg.cho_solve(c, Vs)
    Om = scipy.linalg.cho_solve(c, X.T).T
    Om = Om * scale[:, None] * scale[None, :]
    return (Om + Om.T) / 2.0


def sandwich_parts(series: PatternSeries, fit: FitResult, grid: QuadGrid = None) -> SandwichParts:
    """Empirical ``V``, plug-in ``W`` and the sandwich ``Omega`` for a fit."""
    grid = basis_grid(fit.basis) if grid is None else grid
    bm = BlockMap(fit.d, fit.basis.p, fit.params.q)
    V = empirical_V(series, fit, fit.basis, grid)
    W = plug_in_W(fit, series, fit.basis, grid)
    return SandwichParts(V=V, W=W, Omega=sandwich(V, W, bm), block_map=bm)


@dataclass(frozen=True, eq=False)
class RankOneKernel:
    """Lag-zero covariance ``variance * zeta(u) * zeta(u')`` with spline ``zeta``."""

    zeta_coeffs: np.ndarray
    variance: float

    def values(self, basis: BasisSpec, u) -> np.ndarray:
        z = eval_basis(basis, u) @ np.asarray(self.zeta_coeffs, dtype=float)
        return self.variance * np.outer(z, z)


def theoretical_VW(
    theta0,
    tau0,
    averages: TrendAverages,
    basis: BasisSpec,
    grid: QuadGrid = None,
    kernel: Optional[RankOneKernel] = None,
):
    """Population ``V`` and ``W`` for true season coefficients ``theta0`` (d, p).

    The season intensities are ``exp((theta0_j + tau0 / 2) @ beta)``; double
    integrals weighting by ``exp(gamma_0(u, u'))`` run over the tensor grid.
    A ``None`` kernel means ``gamma_0 = 0``.
    """
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    tau0 = np.zeros(basis.p) if tau0 is None else np.asarray(tau0, dtype=float)
    grid = basis_grid(basis) if grid is None else grid
    d, p = theta0.shape
    q = averages.s1.shape[1]
    if averages.d != d:
        raise DimensionError(f"trend averages have {averages.d} seasons, theta0 has {d}")
    bm = BlockMap(d, p, q)
    B = grid.design(basis)
    K = None if kernel is None else np.exp(kernel.values(basis, grid.nodes))

    mom = [moments(basis, grid, th + tau0 / 2.0) for th in theta0]
    W = _assemble_W(mom, averages, bm)
    V = np.zeros_like(W)
    for j in range(1, d + 1):
        m, sl = mom[j - 1], bm.season(j)
        if K is None:
            e_jj, s_jj, S_jj = m.e**2, m.sigma * m.e, np.outer(m.sigma, m.sigma)
        else:
            wl = grid.weights * np.exp(B @ (theta0[j - 1] + tau0 / 2.0))
            Kw = K @ wl
            e_jj = float(wl @ Kw)
            s_jj = B.T @ (wl * Kw)
            S_jj = (B * wl[:, None]).T @ K @ (B * wl[:, None])
            S_jj = (S_jj + S_jj.T) / 2.0
        a = j - 1
        V[sl, sl] = (averages.e2[a] * (S_jj - np.outer(m.sigma, m.sigma)) + averages.e1[a] * m.Sigma) / d
        cross = (np.outer(s_jj - m.sigma * m.e, averages.s2[a]) + np.outer(m.sigma, averages.s1[a])) / d
        V[sl, bm.trend] = cross
        V[bm.trend, sl] = cross.T
        V[bm.trend, bm.trend] += ((e_jj - m.e**2) * averages.S2[a] + m.e * averages.S1[a]) / d
    return V, W


def normal_quantile(alpha: float) -> float:
    """Two-sided standard normal multiplier ``z_{alpha/2}``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def _omega_matrix(Omega):
    return Omega.Omega if isinstance(Omega, SandwichParts) else np.asarray(Omega, dtype=float)


def band_trend(fit: FitResult, Omega, t, alpha: float = 0.05, position: bool = False):
    """Pointwise band ``c_hat(t) -/+ z sqrt(b(t)^T Omega_eta b(t) / n)``.

    ``t`` is a period index, or with ``position=True`` the monomial argument
    itself (e.g. a point of ``[0, 1]`` for normalized trends).  Returns
    ``(estimate, lo, hi)``.
    """
    z = normal_quantile(alpha)
    Om = _omega_matrix(Omega)
    bm = BlockMap(fit.d, fit.basis.p, fit.params.q)
    spec = fit.trend_spec
    if position:
        b = spec.from_position(np.asarray(t, dtype=float))
    else:
        b = trend_matrix(spec, np.atleast_1d(t)) if np.ndim(t) else eval_trend(spec, t)
    est = b @ fit.params.eta
    O = Om[bm.trend, bm.trend]
    var = np.einsum("...i,ij,...j->...", b, O, b) / fit.n
    half = z * np.sqrt(np.maximum(var, 0.0))
    return est, est - half, est + half


def band_intensity(fit: FitResult, Omega, j: int, u, alpha: float = 0.05, single_factor: bool = False):
    """Pointwise band for the season-``j`` intensity at ``u`` by the delta method.

    The variance of ``exp(theta_j @ beta(u))`` is ``lambda^2 beta^T Omega_jj beta / n``.
    ``single_factor=True`` uses a single ``lambda`` factor instead.  Returns
    ``(estimate, lo, hi)``.
    """
    z = normal_quantile(alpha)
    Om = _omega_matrix(Omega)
    bm = BlockMap(fit.d, fit.basis.p, fit.params.q)
    sl = bm.season(j)
    beta = eval_basis(fit.basis, u)
    lam = np.exp(beta @ fit.params.theta[j - 1])
    quad = np.einsum("...i,ij,...j->...", beta, Om[sl, sl], beta)
    factor = lam if single_factor else lam**2
    half = z * np.sqrt(np.maximum(factor * quad / fit.n, 0.0))
    return lam, lam - half, lam + half
