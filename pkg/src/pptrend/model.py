"""Working Poisson likelihood for trend-plus-season point-process series.

For day ``t`` with events ``u_t1..u_tm`` in season ``j(t)`` the working
log-intensity is ``theta_{j(t)} @ beta(u) + eta @ b(t)``.  The objective is
the per-day average of the Poisson log-likelihood without the ``log m!``
constants; it is concave in ``(theta_1, ..., theta_d, eta)`` and is
maximized by Newton ascent.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.linalg

from .basis import BasisSpec, SeasonIndexer, TrendSpec, eval_basis, trend_matrix
from .errors import DimensionError, NotConvergedError, OutOfDomainError
from .quadrature import QuadGrid, basis_grid

__all__ = [
    "PointPattern",
    "PatternSeries",
    "Params",
    "FitConfig",
    "FitResult",
    "Predictor",
    "DegenerateSeasonWarning",
    "log_poisson_density",
    "objective",
    "objective_trend_only",
    "score",
    "day_scores",
    "hessian",
    "fit",
    "fit_trend_only",
    "decompose",
    "predict",
]

log = logging.getLogger(__name__)


class DegenerateSeasonWarning(RuntimeWarning):
    """A season has no events, so its coefficients are only held finite by a ridge."""


@dataclass(frozen=True, eq=False)
class PointPattern:
    points: np.ndarray

    def __init__(self, points=()):
        arr = np.asarray(points, dtype=float).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    def __len__(self):
        return self.m


class PatternSeries:
    """Patterns ``x_1..x_n`` with their seasonal indexer and trend basis."""

    def __init__(
        self,
        patterns: Sequence,
        indexer: Optional[SeasonIndexer] = None,
        trend_spec: Optional[TrendSpec] = None,
    ):
        self.patterns: List[PointPattern] = [
            p if isinstance(p, PointPattern) else PointPattern(p) for p in patterns
        ]
        if not self.patterns:
            raise ValueError("a series needs at least one pattern")
        self.indexer = indexer if indexer is not None else SeasonIndexer(1)
        if trend_spec is None:
            trend_spec = TrendSpec(q=0, mode="normalized", n=len(self.patterns))
        if (
            trend_spec.mode == "residue"
            and trend_spec.r % self.indexer.d
        ):
            raise ValueError(
                f"trend period r={trend_spec.r} must be a multiple of d={self.indexer.d}"
            )
        self.trend_spec = trend_spec
        self._point_sums = {}

    @property
    def n(self) -> int:
        return len(self.patterns)

    @property
    def d(self) -> int:
        return self.indexer.d

    @property
    def q(self) -> int:
        return self.trend_spec.q

    @property
    def times(self) -> np.ndarray:
        return np.arange(1, self.n + 1)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.m for p in self.patterns], dtype=float)

    @property
    def seasons(self) -> np.ndarray:
        """Zero-based season of each day."""
        return self.indexer.season(self.times) - 1

    @property
    def trend_design(self) -> np.ndarray:
        return trend_matrix(self.trend_spec, self.times)

    def point_sums(self, basis: BasisSpec) -> np.ndarray:
        """Per-day sums ``sum_k beta(u_tk)``, shape ``(n, p)``."""
        cached = self._point_sums.get(basis)
        if cached is not None:
            return cached
        counts = np.array([p.m for p in self.patterns])
        allpts = np.concatenate([p.points for p in self.patterns]) if counts.sum() else np.empty(0)
        try:
            B = eval_basis(basis, allpts)
        except OutOfDomainError as exc:
            raise OutOfDomainError(f"event outside the basis domain: {exc}") from None
        day = np.repeat(np.arange(self.n), counts)
        S = np.zeros((self.n, basis.p))
        np.add.at(S, day, B)
        S.setflags(write=False)
        self._point_sums[basis] = S
        return S

    def with_patterns(self, patterns) -> "PatternSeries":
        return PatternSeries(patterns, self.indexer, self.trend_spec)


@dataclass(eq=False)
class Params:
    """Season coefficient rows ``theta`` (d, p) and trend coefficients ``eta`` (q,)."""

    theta: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.eta = np.asarray(self.eta, dtype=float).ravel()

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    @property
    def q(self) -> int:
        return self.eta.shape[0]

    @property
    def dim(self) -> int:
        return self.d * self.p + self.q

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.eta])

    @classmethod
    def from_vector(cls, vec, d: int, p: int, q: int) -> "Params":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (d * p + q,):
            raise DimensionError(f"expected vector of length {d * p + q}, got {vec.shape}")
        return cls(vec[: d * p].reshape(d, p).copy(), vec[d * p :].copy())

    @classmethod
    def zeros(cls, d: int, p: int, q: int) -> "Params":
        return cls(np.zeros((d, p)), np.zeros(q))


def log_poisson_density(pattern, log_intensity: Callable, intensity_integral: float) -> float:
    """Log density of a Poisson pattern, ``-int(lambda) - log(m!) + sum log lambda(u_k)``."""
    if not intensity_integral >= 0:
        raise ValueError(f"intensity integral must be nonnegative, got {intensity_integral}")
    pts = pattern.points if isinstance(pattern, PointPattern) else np.asarray(pattern, float)
    m = pts.shape[0]
    total = float(np.sum([log_intensity(u) for u in pts])) if m else 0.0
    return -intensity_integral - math.lgamma(m + 1) + total


class _Likelihood:
    """Objective, gradient and Hessian of the working likelihood on one series."""

    def __init__(self, series: PatternSeries, basis: BasisSpec, grid: QuadGrid, ridge=None):
        self.n = series.n
        self.d = series.d
        self.p = basis.p
        self.q = series.q
        self.B = grid.design(basis)
        self.w = grid.weights
        self.S = series.point_sums(basis)
        self.m = series.counts
        self.season = series.seasons
        self.bt = series.trend_design
        self.onehot = np.zeros((self.n, self.d))
        self.onehot[np.arange(self.n), self.season] = 1.0
        # per-season sums of point sums, reused by every evaluation
        self.S_season = self.onehot.T @ self.S
        self.mb = self.m @ self.bt
        self.ridge = np.zeros(self.d) if ridge is None else np.asarray(ridge, float)

    @property
    def dim(self):
        return self.d * self.p + self.q

    def split(self, x):
        return x[: self.d * self.p].reshape(self.d, self.p), x[self.d * self.p :]

    def _terms(self, x):
        theta, eta = self.split(x)
        lam = np.exp(self.B @ theta.T) * self.w[:, None]  # (G, d)
        e = lam.sum(axis=0)
        lin = self.bt @ eta
        ex = np.exp(lin)
        return theta, eta, lam, e, lin, ex

    def value(self, x):
        theta, eta, lam, e, lin, ex = self._terms(x)
        val = -ex @ e[self.season] + self.m @ lin + np.sum(theta * self.S_season)
        val /= self.n
        return val - 0.5 * np.sum(self.ridge[:, None] * theta**2)

    def gradient(self, x):
        theta, eta, lam, e, lin, ex = self._terms(x)
        sigma = self.B.T @ lam  # (p, d)
        ex_season = self.onehot.T @ ex  # (d,)
        g_theta = (-(sigma * ex_season).T + self.S_season) / self.n
        g_theta -= self.ridge[:, None] * theta
        g_eta = (-(ex * e[self.season]) @ self.bt + self.mb) / self.n
        return np.concatenate([g_theta.ravel(), g_eta])

    def day_scores(self, x):
        """Per-day score vectors, shape ``(n, dp + q)``; no ridge term."""
        theta, eta, lam, e, lin, ex = self._terms(x)
        sigma = self.B.T @ lam
        psi = np.zeros((self.n, self.dim))
        comp = -ex[:, None] * sigma.T[self.season] + self.S  # (n, p)
        for j in range(self.d):
            rows = self.season == j
            psi[rows, j * self.p : (j + 1) * self.p] = comp[rows]
        psi[:, self.d * self.p :] = (-ex * e[self.season] + self.m)[:, None] * self.bt
        return psi

    def hessian(self, x):
        theta, eta, lam, e, lin, ex = self._terms(x)
        p, d = self.p, self.d
        H = np.zeros((self.dim, self.dim))
        sigma = self.B.T @ lam
        ex_season = self.onehot.T @ ex
        # sum_t exp(eta b_t) b_t per season, and exp(eta b_t) e_j b_t b_t^T overall
        exb_season = self.onehot.T @ (ex[:, None] * self.bt)  # (d, q)
        for j in range(d):
            Sigma = (self.B * lam[:, j : j + 1]).T @ self.B
            sl = slice(j * p, (j + 1) * p)
            H[sl, sl] = -ex_season[j] * Sigma / self.n - self.ridge[j] * np.eye(p)
            cross = -np.outer(sigma[:, j], exb_season[j]) / self.n
            H[sl, d * p :] = cross
            H[d * p :, sl] = cross.T
        wt = ex * e[self.season]
        H[d * p :, d * p :] = -(self.bt * wt[:, None]).T @ self.bt / self.n
        return (H + H.T) / 2.0


def _check_params(series: PatternSeries, basis: BasisSpec, params: Params):
    if params.theta.shape != (series.d, basis.p) or params.eta.shape != (series.q,):
        raise DimensionError(
            f"params have theta {params.theta.shape}, eta {params.eta.shape}; series needs "
            f"theta ({series.d}, {basis.p}) and eta ({series.q},)"
        )


def _default_grid(basis, grid):
    if basis is None:
        raise TypeError("a basis is required")
    return basis_grid(basis) if grid is None else grid


def objective(series: PatternSeries, params: Params, grid: QuadGrid = None, basis: BasisSpec = None) -> float:
    """Working log-likelihood per day (log m! constants dropped)."""
    grid = _default_grid(basis, grid)
    _check_params(series, basis, params)
    return float(_Likelihood(series, basis, grid).value(params.to_vector()))


def objective_trend_only(series: PatternSeries, theta, eta, grid: QuadGrid = None, basis: BasisSpec = None) -> float:
    """Objective of the trend-only model; the ``d = 1`` case of :func:`objective`."""
    if series.d != 1:
        raise DimensionError("the trend-only objective needs a series with d = 1")
    return objective(series, Params(np.atleast_2d(theta), eta), grid, basis)


def score(series: PatternSeries, params: Params, grid: QuadGrid = None, basis: BasisSpec = None) -> np.ndarray:
    """Gradient of :func:`objective`, the per-day scores averaged over days."""
    grid = _default_grid(basis, grid)
    _check_params(series, basis, params)
    return _Likelihood(series, basis, grid).gradient(params.to_vector())


def day_scores(series: PatternSeries, params: Params, grid: QuadGrid = None, basis: BasisSpec = None) -> np.ndarray:
    """Per-day score vectors ``psi_t``, one row per day."""
    grid = _default_grid(basis, grid)
    _check_params(series, basis, params)
    return _Likelihood(series, basis, grid).day_scores(params.to_vector())


def hessian(series: PatternSeries, params: Params, grid: QuadGrid = None, basis: BasisSpec = None) -> np.ndarray:
    grid = _default_grid(basis, grid)
    _check_params(series, basis, params)
    return _Likelihood(series, basis, grid).hessian(params.to_vector())


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-8
    max_iter: int = 100
    ridge: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass(eq=False)
class FitResult:
    params: Params
    mu: np.ndarray
    seasonal: np.ndarray
    objective_value: float
    gradient_norm: float
    iterations: int
    converged: bool
    n: int
    basis: BasisSpec
    trend_spec: TrendSpec
    history: List[float] = field(default_factory=list)
    degenerate_seasons: List[int] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.params.d

    def require_converged(self):
        if not self.converged:
            raise NotConvergedError(
                f"fit did not converge (gradient norm {self.gradient_norm:.3g} after "
                f"{self.iterations} iterations)"
            )


def decompose(params: Params):
    """Split season rows into their mean and zero-sum deviations."""
    theta = np.atleast_2d(np.asarray(params.theta, dtype=float))
    mu = theta.mean(axis=0)
    return mu, theta - mu


def _newton_direction(H, g):
    try:
        c = scipy.linalg.cho_factor(-H, lower=True, check_finite=True)
        return scipy.linalg.cho_solve(c, g)
    except (np.linalg.LinAlgError, ValueError):
        vals, vecs = np.linalg.eigh(-H)
        floor = max(vals.max(), 1.0) * 1e-12
        return vecs @ ((vecs.T @ g) / np.maximum(vals, floor))


def fit(
    series: PatternSeries,
    basis: BasisSpec,
    grid: QuadGrid = None,
    config: FitConfig = None,
    init: Optional[Params] = None,
) -> FitResult:
    """Maximize the working likelihood by damped Newton ascent.

    Iterations stop once the sup-norm of the gradient, taken with each trend
    coordinate rescaled by the largest magnitude of its covariate, is below
    ``config.tol``.  The rescaling only improves conditioning for residue
    trends with long periods; since the scale factors are at least one, the
    unscaled gradient then satisfies the same bound.
    """
    config = FitConfig() if config is None else config
    grid = _default_grid(basis, grid)
    d, p, q = series.d, basis.p, series.q

    season_counts = np.bincount(series.seasons, weights=series.counts, minlength=d)
    degenerate = [int(j) for j in np.flatnonzero(season_counts == 0)]
    ridge = np.zeros(d)
    if degenerate:
        warnings.warn(
            f"seasons {[j + 1 for j in degenerate]} have no events; their coefficients are "
            f"stabilized with ridge {config.ridge:g}",
            DegenerateSeasonWarning,
            stacklevel=2,
        )
        ridge[degenerate] = config.ridge
    lik = _Likelihood(series, basis, grid, ridge)

    if init is None:
        x = np.zeros(lik.dim)
    else:
        x = Params(init.theta, init.eta).to_vector()
        if x.shape != (lik.dim,):
            raise DimensionError(f"init has dimension {x.shape[0]}, expected {lik.dim}")

    scale = np.ones(lik.dim)
    if q:
        scale[d * p :] = np.maximum(1.0, np.abs(lik.bt).max(axis=0))

    f = lik.value(x)
    history = [float(f)]
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        g = lik.gradient(x)
        if np.max(np.abs(scale * g), initial=0.0) <= config.tol:
            converged = True
            it -= 1
            break
        H = lik.hessian(x)
        step = scale * _newton_direction(scale[:, None] * H * scale[None, :], scale * g)
        slack = 1e-14 * max(1.0, abs(f))
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            f_new = lik.value(x_new)
            if np.isfinite(f_new) and f_new >= f - slack:
                break
            t *= 0.5
        else:
            log.debug("line search failed at iteration %d", it)
            break
        x, f = x_new, f_new
        history.append(float(f))

    g = lik.gradient(x)
    gnorm = float(np.max(np.abs(scale * g), initial=0.0))
    converged = converged or gnorm <= config.tol
    params = Params.from_vector(x, d, p, q)
    mu, seasonal = decompose(params)
    return FitResult(
        params=params,
        mu=mu,
        seasonal=seasonal,
        objective_value=float(f),
        gradient_norm=gnorm,
        iterations=it,
        converged=bool(converged),
        n=series.n,
        basis=basis,
        trend_spec=series.trend_spec,
        history=history,
        degenerate_seasons=degenerate,
    )


def fit_trend_only(series: PatternSeries, basis: BasisSpec, grid=None, config=None, init=None) -> FitResult:
    """Fit the trend-only model (``d = 1``)."""
    if series.d != 1:
        raise DimensionError("trend-only fitting needs a series with d = 1")
    return fit(series, basis, grid, config, init)


class Predictor:
    """Fitted season intensities ``exp(theta_j @ beta(u))`` and trend ``eta @ b(t)``."""

    def __init__(self, result: FitResult, basis: BasisSpec = None, trend_spec: TrendSpec = None):
        self.params = result.params
        self.basis = basis if basis is not None else result.basis
        self.trend_spec = trend_spec if trend_spec is not None else result.trend_spec

    def log_intensity(self, j: int, u):
        if not 1 <= j <= self.params.d:
            raise IndexError(f"season must be in 1..{self.params.d}, got {j}")
        return eval_basis(self.basis, u) @ self.params.theta[j - 1]

    def intensity(self, j: int, u):
        return np.exp(self.log_intensity(j, u))

    def mean_log_intensity(self, u):
        """``mu(u)``, the season average of the log intensities."""
        return eval_basis(self.basis, u) @ self.params.theta.mean(axis=0)

    def seasonal_factor(self, j: int, u):
        """Multiplicative deformation ``exp(s_j(u))`` of season ``j``."""
        return self.intensity(j, u) / np.exp(self.mean_log_intensity(u))

    def trend(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        vals = trend_matrix(self.trend_spec, t_arr) @ self.params.eta
        return float(vals[0]) if np.ndim(t) == 0 else vals

    def trend_at_position(self, s):
        """Trend at monomial argument ``s`` (``t / (n + 1)`` in normalized mode)."""
        return self.trend_spec.from_position(s) @ self.params.eta


def predict(result: FitResult, basis: BasisSpec = None, trend_spec: TrendSpec = None) -> Predictor:
    return Predictor(result, basis, trend_spec)
