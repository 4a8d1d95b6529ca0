"""Log-Gaussian Cox series generation and the Monte Carlo error study.

Random streams come from the counter-based Philox generator.  Each replicate
gets its own stream keyed by ``(seed, replicate)`` and each day a substream
keyed by ``(seed, replicate, t)``, so results do not depend on how replicates
are scheduled over workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np
from scipy.signal import lfilter

from .basis import BasisSpec, TrendSpec, eval_basis, make_bspline_basis, spline_sup_bound
from .errors import ConfigurationError
from .model import FitConfig, PatternSeries, PointPattern, fit
from .quadrature import QuadGrid, basis_grid, make_grid

__all__ = [
    "SimModel",
    "ErrorSummary",
    "THETA0",
    "TAU0",
    "ETA0",
    "scenario",
    "day_rng",
    "latent_rng",
    "ar1_path",
    "latent_path",
    "normalize_zeta",
    "realize_log_intensity",
    "sample_pattern",
    "simulate_series",
    "run_replicate",
    "run_study",
]

log = logging.getLogger(__name__)

THETA0 = (-5.45, -4.96, -0.13, -4.14, -1.15, -5.52)
TAU0 = (0.508, 0.331, -0.113, 0.270, -0.056, 0.459)
ETA0 = (9.38, -8.43)
SIGMA = 2.0
AR_COEF = 0.7

SCENARIOS = ("working", "independent", "ar1")
_PRESET_NAMES = {"i": "working", "ii": "independent", "iii": "ar1"}


# -- random streams ---------------------------------------------------------


def _stream(*key: int) -> np.random.Generator:
    seed, *spawn = key
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in spawn))
    return np.random.Generator(np.random.Philox(ss))


def latent_rng(seed: int, replicate: int) -> np.random.Generator:
    """Stream for the latent amplitude path of one replicate."""
    return _stream(seed, replicate, 0)


def day_rng(seed: int, replicate: int, t: int) -> np.random.Generator:
    """Stream for the events of day ``t >= 1`` of one replicate."""
    return _stream(seed, replicate, t)


# -- model ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimModel:
    """Trend-only log-Gaussian Cox model with a rank-one latent field.

    ``log Lambda_t(u) = (theta0 + Z_t zeta) @ beta(u) + eta0 @ b(t)`` with
    ``b`` the normalized trend basis.
    """

    basis: BasisSpec
    theta0: np.ndarray
    eta0: np.ndarray
    scenario: str = "working"
    sigma: float = 0.0
    a: float = 0.0
    sigma_eps: float = 0.0
    zeta: Optional[np.ndarray] = None
    tau0: Optional[np.ndarray] = None
    n: int = 100
    seed: int = 0
    stationary_start: bool = False
    grid: Optional[QuadGrid] = field(default=None, repr=False)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "theta0", np.asarray(self.theta0, dtype=float))
        object.__setattr__(self, "eta0", np.asarray(self.eta0, dtype=float))
        if self.grid is None:
            object.__setattr__(self, "grid", basis_grid(self.basis))
        if self.zeta is None:
            object.__setattr__(self, "zeta", normalize_zeta(self.theta0, self.basis, self.grid))
        else:
            object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=float))
        tau = np.zeros(self.basis.p) if self.tau0 is None else np.asarray(self.tau0, float)
        object.__setattr__(self, "tau0", tau)
        if self.scenario == "ar1":
            if not abs(self.a) < 1:
                raise ConfigurationError("AR coefficient must satisfy |a| < 1")
            if abs(self.sigma_eps**2 - self.sigma**2 * (1 - self.a**2)) > 1e-10:
                raise ConfigurationError("sigma_eps^2 must equal sigma^2 (1 - a^2)")

    @property
    def trend_spec(self) -> TrendSpec:
        return TrendSpec(q=self.eta0.shape[0], mode="normalized", n=self.n)

    @property
    def theta_target(self) -> np.ndarray:
        """Limit of the working-likelihood estimator, ``theta0 + tau0 / 2``."""
        return self.theta0 + self.tau0 / 2.0

    def with_(self, **changes) -> "SimModel":
        return replace(self, **changes)


def scenario(name: str, n: int = 300, seed: int = 1) -> SimModel:
    """Preset simulation model ``"i"``, ``"ii"`` or ``"iii"``.

    (i) no latent field; (ii) independent ``Z_t ~ N(0, 4)``;
    (iii) AR(1) ``Z_t`` with ``a = 0.7`` and stationary variance 4.
    """
    try:
        kind = _PRESET_NAMES[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r}; expected i, ii or iii") from None
    basis = make_bspline_basis((0.0, 24.0), 3, 2)
    common = dict(basis=basis, theta0=THETA0, eta0=ETA0, n=n, seed=seed, scenario=kind)
    if kind == "working":
        return SimModel(**common)
    if kind == "independent":
        return SimModel(**common, sigma=SIGMA, tau0=TAU0)
    return SimModel(
        **common,
        sigma=SIGMA,
        a=AR_COEF,
        sigma_eps=SIGMA * np.sqrt(1 - AR_COEF**2),
        tau0=TAU0,
    )


def ar1_path(n: int, a: float, sigma_eps: float, rng, stationary_start: bool = False) -> np.ndarray:
    """``Z_1 = eps_1``, ``Z_t = a Z_{t-1} + eps_t`` with ``eps_t ~ N(0, sigma_eps^2)``.

    With ``stationary_start`` the first value is drawn from the stationary
    law ``N(0, sigma_eps^2 / (1 - a^2))`` instead.
    """
    if not abs(a) < 1:
        raise ConfigurationError("AR coefficient must satisfy |a| < 1")
    if not sigma_eps > 0:
        raise ConfigurationError("sigma_eps must be positive")
    eps = rng.normal(0.0, sigma_eps, size=n)
    if stationary_start and n:
        eps[0] /= np.sqrt(1 - a * a)
    return lfilter([1.0], [1.0, -a], eps)


def latent_path(model: SimModel, rng) -> np.ndarray:
    if model.scenario == "working":
        return np.zeros(model.n)
    if model.scenario == "independent":
        return rng.normal(0.0, model.sigma, size=model.n)
    return ar1_path(model.n, model.a, model.sigma_eps, rng, model.stationary_start)


def normalize_zeta(theta0, basis: BasisSpec, grid: QuadGrid = None) -> np.ndarray:
    """Coefficients of ``mu0 / ||mu0||_{L2}`` where ``mu0 = theta0 @ beta``."""
    theta0 = np.asarray(theta0, dtype=float)
    grid = basis_grid(basis) if grid is None else grid
    B = grid.design(basis)
    gram = (B * grid.weights[:, None]).T @ B
    norm2 = float(theta0 @ gram @ theta0)
    if not norm2 > 0:
        raise ConfigurationError("theta0 must be nonzero to define a unit-norm direction")
    return theta0 / np.sqrt(norm2)


def realize_log_intensity(model: SimModel, t, z_t: float):
    """Spline coefficients and scalar trend offset of ``log Lambda_t``."""
    if model.scenario == "working":
        z_t = 0.0
    coeffs = model.theta0 + z_t * model.zeta
    offset = float(model.trend_spec.from_position(t / (model.n + 1)) @ model.eta0)
    return coeffs, offset


def sample_pattern(log_intensity, basis: BasisSpec, rng, check: bool = True) -> PointPattern:
    """Exact Poisson draw by thinning a homogeneous process.

    ``log_intensity`` is ``(coeffs, offset)``.  The dominating rate uses the
    largest spline coefficient, which bounds the spline everywhere.
    """
    coeffs, offset = log_intensity
    coeffs = np.asarray(coeffs, dtype=float)
    log_bound = spline_sup_bound(basis, coeffs) + offset
    rate = np.exp(log_bound)
    n_prop = rng.poisson(rate * basis.length)
    u = basis.lower + basis.length * rng.random(n_prop)
    if n_prop == 0:
        return PointPattern(u)
    accept_prob = np.exp(eval_basis(basis, u) @ coeffs + offset - log_bound)
    if check and np.any(accept_prob > 1.0 + 1e-12):
        raise AssertionError("thinning acceptance probability exceeds one")
    keep = rng.random(n_prop) < accept_prob
    return PointPattern(u[keep])


def simulate_series(model: SimModel, replicate: int = 0) -> PatternSeries:
    z = latent_path(model, latent_rng(model.seed, replicate))
    patterns = []
    for t in range(1, model.n + 1):
        li = realize_log_intensity(model, t, z[t - 1])
        patterns.append(sample_pattern(li, model.basis, day_rng(model.seed, replicate, t)))
    return PatternSeries(patterns, trend_spec=model.trend_spec)


# -- error study ------------------------------------------------------------

TARGETS = ("theta", "eta", "intensity", "trend")


@dataclass
class ErrorSummary:
    """Bias, sd and rmse per target, plus bookkeeping for excluded replicates.

    ``rows`` maps target name to ``(bias, sd, rmse)``.
    """

    scenario: str
    n: int
    replications: int
    excluded: int
    rows: Dict[str, tuple]
    estimates: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def as_records(self, label: Optional[str] = None):
        name = self.scenario if label is None else label
        return [
            {"scenario": name, "n": self.n, "target": k, "bias": b, "sd": s, "rmse": r}
            for k, (b, s, r) in self.rows.items()
        ]


def _summarize(est: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None):
    """Bias, sd and rmse under the (weighted) Euclidean norm, replicate axis first."""
    w = np.ones(est.shape[1]) if weights is None else weights
    mean = est.mean(axis=0)
    bias = np.sqrt(np.sum(w * (mean - target) ** 2))
    sd = np.sqrt(np.mean(np.sum(w * (est - mean) ** 2, axis=1)))
    rmse = np.sqrt(np.mean(np.sum(w * (est - target) ** 2, axis=1)))
    return float(bias), float(sd), float(rmse)


def _trend_grid():
    return make_grid((0.0, 1.0), panels=1, nodes_per_panel=10)


FIT_TRENDS = ("anchored", "normalized")


def run_replicate(model: SimModel, replicate: int, config: FitConfig = None, fit_trend: str = "anchored"):
    """Simulate and fit one replicate; returns ``(converged, theta_hat, eta_hat)``.

    ``fit_trend`` selects the trend covariates of the fitted model:
    ``"anchored"`` uses ``s = (t - 1) / (n - 1)``, so the fitted trend is zero
    on day one; ``"normalized"`` uses the generating ``s = t / (n + 1)``.
    """
    if fit_trend not in FIT_TRENDS:
        raise ConfigurationError(f"fit_trend must be one of {FIT_TRENDS}")
    series = simulate_series(model, replicate)
    spec = TrendSpec(q=model.eta0.shape[0], mode=fit_trend, n=model.n)
    series = PatternSeries(series.patterns, trend_spec=spec)
    res = fit(series, model.basis, model.grid, config)
    return res.converged, res.params.theta[0].copy(), res.params.eta.copy()


def _replicate_task(args):
    model, rep, config, fit_trend = args
    return run_replicate(model, rep, config, fit_trend)


def run_study(
    model: SimModel,
    replications: int,
    config: FitConfig = None,
    workers: int = 1,
    label: Optional[str] = None,
    fit_trend: str = "anchored",
) -> ErrorSummary:
    """Replicate simulate-and-fit and summarize errors against the model's limits.

    Targets are ``theta0 + tau0 / 2`` for the spline coefficients, ``eta0``,
    the intensity ``exp((theta0 + tau0 / 2) @ beta)`` in the ``L2`` norm on
    the domain, and the trend on ``[0, 1]`` in the ``L2`` norm.  Fitted and
    true trends are compared as polynomials on ``[0, 1]`` in their own
    position variables.
    """
    if replications < 2:
        raise ConfigurationError("a study needs at least two replications")
    tasks = [(model, rep, config, fit_trend) for rep in range(replications)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=max(1, replications // (4 * workers))))
    else:
        results = [_replicate_task(t) for t in tasks]

    ok = [r for r in results if r[0]]
    excluded = len(results) - len(ok)
    if excluded:
        log.warning("%d of %d replicates did not converge and were excluded", excluded, replications)
    if len(ok) < 2:
        raise RuntimeError("fewer than two converged replicates")
    theta = np.array([r[1] for r in ok])
    eta = np.array([r[2] for r in ok])

    grid = model.grid
    B = grid.design(model.basis)
    lam_hat = np.exp(theta @ B.T)
    lam_true = np.exp(B @ model.theta_target)
    tgrid = _trend_grid()
    P = model.trend_spec.from_position(tgrid.nodes)
    c_hat = eta @ P.T
    c_true = P @ model.eta0

    rows = {
        "theta": _summarize(theta, model.theta_target),
        "eta": _summarize(eta, model.eta0),
        "intensity": _summarize(lam_hat, lam_true, grid.weights),
        "trend": _summarize(c_hat, c_true, tgrid.weights),
    }
    return ErrorSummary(
        scenario=label or model.scenario,
        n=model.n,
        replications=replications,
        excluded=excluded,
        rows=rows,
        estimates={"theta": theta, "eta": eta},
    )
