"""Event-file ingestion, analysis configuration and fit documents."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np

from .basis import BasisSpec, SeasonIndexer, TrendSpec, make_bspline_basis
from .errors import ConfigurationError, DataFormatError
from .quadrature import DEFAULT_REFINE, QuadGrid, basis_grid
from .model import FitConfig, FitResult, Params, PatternSeries, PointPattern, decompose

__all__ = [
    "AnalysisConfig",
    "FitDocument",
    "FORMAT_VERSION",
    "load_events",
    "read_patterns",
    "build_series",
]

FORMAT_VERSION = 1


def _open_rows(path):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    # drop blank lines but keep line numbers
    numbered = [(i + 1, r) for i, r in enumerate(rows) if r and any(c.strip() for c in r)]
    if not numbered:
        raise DataFormatError(f"{path}: file is empty", 1)
    return numbered


def _header(numbered, expected):
    line, header = numbered[0]
    names = [h.strip().lower() for h in header]
    missing = [e for e in expected if e not in names]
    if missing:
        raise DataFormatError(
            f"header must contain {', '.join(expected)}; got {', '.join(names)}", line
        )
    return [names.index(e) for e in expected]


def read_patterns(
    path,
    mode: str = "presliced",
    domain=(0.0, 24.0),
    day_boundary: float = 0.0,
    clock_scale: float = 1.0,
    origin: Optional[date] = None,
):
    """Read an events CSV into a list of per-day patterns.

    ``presliced`` files have a ``day,u`` header with 1-based day indices.
    ``raw`` files have a ``timestamp`` column of naive ISO-8601 local times;
    a day runs from ``day_boundary`` hours past midnight to the same time the
    next calendar day, and ``u`` is hours since the day start times
    ``clock_scale``.  Day 1 is the date of ``origin`` or, by default, of the
    earliest event.  Days without events become empty patterns.
    """
    lo, hi = (float(x) for x in domain)
    numbered = _open_rows(path)
    days, us = [], []
    if mode == "presliced":
        iday, iu = _header(numbered, ("day", "u"))
        for line, row in numbered[1:]:
            try:
                day_txt, u_txt = row[iday].strip(), row[iu].strip()
            except IndexError:
                raise DataFormatError("missing field", line) from None
            try:
                day = int(day_txt)
                u = float(u_txt)
            except ValueError:
                raise DataFormatError(f"cannot parse day={day_txt!r}, u={u_txt!r}", line) from None
            if day < 1:
                raise DataFormatError(f"day index must be >= 1, got {day}", line)
            if not (lo <= u < hi):
                raise DataFormatError(f"u={u} outside [{lo}, {hi})", line)
            days.append(day)
            us.append(u)
    elif mode == "raw":
        (its,) = _header(numbered, ("timestamp",))
        shift = timedelta(hours=day_boundary)
        stamps = []
        for line, row in numbered[1:]:
            try:
                txt = row[its].strip()
                ts = datetime.fromisoformat(txt)
            except (IndexError, ValueError):
                raise DataFormatError(f"cannot parse timestamp {row!r}", line) from None
            if ts.tzinfo is not None:
                ts = ts.replace(tzinfo=None)
            stamps.append((line, ts - shift))
        if not stamps:
            raise DataFormatError(f"{path}: no event rows after the header", numbered[0][0])
        first = origin if origin is not None else min(ts.date() for _, ts in stamps)
        for line, ts in stamps:
            day = (ts.date() - first).days + 1
            if day < 1:
                raise DataFormatError(f"timestamp precedes the origin date {first}", line)
            midnight = datetime.combine(ts.date(), datetime.min.time())
            u = (ts - midnight).total_seconds() / 3600.0 * clock_scale
            if not (lo <= u < hi):
                raise DataFormatError(f"u={u} outside [{lo}, {hi})", line)
            days.append(day)
            us.append(u)
    else:
        raise ConfigurationError(f"unknown events mode {mode!r}")
    if not days:
        raise DataFormatError(f"{path}: no event rows after the header", numbered[0][0])

    n = max(days)
    buckets = [[] for _ in range(n)]
    for day, u in zip(days, us):
        buckets[day - 1].append(u)
    return [PointPattern(sorted(b)) for b in buckets]


def load_events(path, mode: str = "presliced", d: int = 1, trend_spec: Optional[TrendSpec] = None, **kwargs) -> PatternSeries:
    """Read events into a :class:`PatternSeries` with seasonal period ``d``."""
    patterns = read_patterns(path, mode, **kwargs)
    return PatternSeries(patterns, SeasonIndexer(d), trend_spec)


@dataclass
class AnalysisConfig:
    domain: tuple = (0.0, 24.0)
    spline_degree: int = 3
    interior_knots: int = 4
    d: int = 7
    trend: dict = field(default_factory=lambda: {"mode": "residue", "q": 3})
    quadrature: dict = field(default_factory=lambda: {"nodes_per_panel": 10, "subdivisions": DEFAULT_REFINE})
    optimizer: dict = field(default_factory=lambda: {"tol": 1e-8, "max_iter": 100, "ridge": 1e-6})
    alpha: float = 0.05

    @classmethod
    def from_dict(cls, raw: dict) -> "AnalysisConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(extra))}")
        cfg = cls()
        for key, value in raw.items():
            if key in ("trend", "quadrature", "optimizer"):
                merged = dict(getattr(cfg, key))
                merged.update(value)
                value = merged
            setattr(cfg, key, value)
        cfg.domain = tuple(float(x) for x in cfg.domain)
        if cfg.trend.get("mode") not in ("residue", "normalized", "anchored"):
            raise ConfigurationError(f"unknown trend mode {cfg.trend.get('mode')!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "AnalysisConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
        if not isinstance(raw, dict):
            raise DataFormatError(f"{path}: config must be a JSON object")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["domain"] = list(self.domain)
        return out

    def basis(self) -> BasisSpec:
        return make_bspline_basis(self.domain, self.spline_degree, self.interior_knots)

    def trend_spec(self, n: int) -> TrendSpec:
        """Trend basis for a series of length ``n``.

        A residue trend without an explicit ``r`` uses the largest multiple
        of ``d`` not exceeding ``n``.
        """
        t = self.trend
        mode, q = t["mode"], int(t.get("q", 0))
        if mode == "residue":
            r = t.get("r")
            if r is None:
                r = max(self.d, (n // self.d) * self.d)
            return TrendSpec(q=q, mode="residue", r=int(r))
        return TrendSpec(q=q, mode=mode, n=int(t.get("n") or n))

    def grid(self, basis: BasisSpec) -> QuadGrid:
        q = self.quadrature
        return basis_grid(basis, int(q.get("nodes_per_panel", 10)), int(q.get("subdivisions", DEFAULT_REFINE)))

    def fit_config(self) -> FitConfig:
        return FitConfig(**self.optimizer)


def build_series(patterns, config: AnalysisConfig) -> PatternSeries:
    spec = config.trend_spec(len(patterns))
    return PatternSeries(patterns, SeasonIndexer(config.d), spec)


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


@dataclass(eq=False)
class FitDocument:
    """Serializable record of a fit: parameters, bands' covariance blocks, diagnostics."""

    config: dict
    n: int
    basis: BasisSpec
    trend_spec: TrendSpec
    theta: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    seasonal: np.ndarray
    omega_theta: Optional[np.ndarray]
    omega_eta: Optional[np.ndarray]
    diagnostics: dict
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_fit(cls, fit: FitResult, config: AnalysisConfig, sandwich=None, omega_error: str = None) -> "FitDocument":
        d, p = fit.params.theta.shape
        if sandwich is not None:
            bm = sandwich.block_map
            om_theta = np.stack([sandwich.Omega[bm.season(j), bm.season(j)] for j in range(1, d + 1)])
            om_eta = sandwich.Omega[bm.trend, bm.trend]
        else:
            om_theta = om_eta = None
        diag = {
            "converged": bool(fit.converged),
            "iterations": int(fit.iterations),
            "gradient_norm": float(fit.gradient_norm),
            "objective": float(fit.objective_value),
            "degenerate_seasons": [j + 1 for j in fit.degenerate_seasons],
        }
        if omega_error:
            diag["omega_error"] = omega_error
        return cls(
            config=config.to_dict(),
            n=fit.n,
            basis=fit.basis,
            trend_spec=fit.trend_spec,
            theta=fit.params.theta.copy(),
            eta=fit.params.eta.copy(),
            mu=fit.mu.copy(),
            seasonal=fit.seasonal.copy(),
            omega_theta=om_theta,
            omega_eta=om_eta,
            diagnostics=diag,
        )

    def to_dict(self) -> dict:
        ts = self.trend_spec
        return {
            "format_version": self.format_version,
            "config": self.config,
            "n": self.n,
            "basis": {
                "domain": list(self.basis.domain),
                "degree": self.basis.degree,
                "knots": _floats(self.basis.knots),
            },
            "trend": {"mode": ts.mode, "q": ts.q, "r": ts.r, "n": ts.n},
            "theta": _floats(self.theta),
            "eta": _floats(self.eta),
            "mu": _floats(self.mu),
            "seasonal": _floats(self.seasonal),
            "omega": None
            if self.omega_theta is None
            else {"theta": _floats(self.omega_theta), "eta": _floats(self.omega_eta)},
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "FitDocument":
        try:
            version = raw["format_version"]
            if version != FORMAT_VERSION:
                raise DataFormatError(f"unsupported fit document version {version}")
            b = raw["basis"]
            knots = np.asarray(b["knots"], dtype=float)
            deg = int(b["degree"])
            knots.setflags(write=False)
            basis = BasisSpec(domain=tuple(float(x) for x in b["domain"]), degree=deg, knots=knots)
            t = raw["trend"]
            trend = TrendSpec(q=int(t["q"]), mode=t["mode"], r=t.get("r"), n=t.get("n"))
            q = trend.q
            p = basis.p
            omega = raw.get("omega")
            theta = np.asarray(raw["theta"], dtype=float).reshape(-1, p)
            return cls(
                config=raw["config"],
                n=int(raw["n"]),
                basis=basis,
                trend_spec=trend,
                theta=theta,
                eta=np.asarray(raw["eta"], dtype=float).reshape(q),
                mu=np.asarray(raw["mu"], dtype=float),
                seasonal=np.asarray(raw["seasonal"], dtype=float).reshape(-1, p),
                omega_theta=None if omega is None else np.asarray(omega["theta"], dtype=float).reshape(-1, p, p),
                omega_eta=None if omega is None else np.asarray(omega["eta"], dtype=float).reshape(q, q),
                diagnostics=raw["diagnostics"],
                format_version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"malformed fit document: {exc}") from None

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path) -> "FitDocument":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
        return cls.from_dict(raw)

    def to_fit_result(self) -> FitResult:
        params = Params(self.theta, self.eta)
        mu, seasonal = decompose(params)
        return FitResult(
            params=params,
            mu=mu,
            seasonal=seasonal,
            objective_value=self.diagnostics.get("objective", math.nan),
            gradient_norm=self.diagnostics.get("gradient_norm", math.nan),
            iterations=self.diagnostics.get("iterations", 0),
            converged=self.diagnostics.get("converged", False),
            n=self.n,
            basis=self.basis,
            trend_spec=self.trend_spec,
        )

    def omega_matrix(self) -> Optional[np.ndarray]:
        """Block-diagonal ``Omega`` holding the stored season and trend blocks."""
        if self.omega_theta is None:
            return None
        d, p, _ = self.omega_theta.shape
        q = self.omega_eta.shape[0]
        Om = np.zeros((d * p + q, d * p + q))
        for j in range(d):
            Om[j * p : (j + 1) * p, j * p : (j + 1) * p] = self.omega_theta[j]
        Om[d * p :, d * p :] = self.omega_eta
        return Om
