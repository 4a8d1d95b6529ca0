"""Brute-force and population-level reference computations for testing.

Nothing here is used by the estimation path.  Integrals are evaluated
directly on quadrature nodes rather than through :mod:`pptrend.quadrature`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .basis import BasisSpec, eval_basis
from .quadrature import QuadGrid, basis_grid

__all__ = [
    "TrueModel",
    "MonteCarloEstimate",
    "fd_gradient",
    "fd_jacobian",
    "rho0",
    "rho0_gradient",
    "grid_maximize",
    "mc_campbell",
]


def fd_gradient(f: Callable, at, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not h > 0:
        raise ValueError("step must be positive")
    x = np.asarray(at, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f: Callable, at, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function, rows = outputs."""
    x = np.asarray(at, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(eq=False)
class TrueModel:
    """Population parameters of a trend-plus-season log-Gaussian model.

    The trend is the residue monomial basis ``(a - 1)^k`` over one cycle of
    length ``r = w d``; ``v0 = tau0 @ beta`` is the latent variance.
    """

    theta0: np.ndarray
    tau0: np.ndarray
    eta0: np.ndarray
    r: int
    basis: BasisSpec
    grid: QuadGrid = None

    def __post_init__(self):
        self.theta0 = np.atleast_2d(np.asarray(self.theta0, dtype=float))
        self.tau0 = np.asarray(self.tau0, dtype=float)
        self.eta0 = np.asarray(self.eta0, dtype=float)
        if self.r % self.d:
            raise ValueError("r must be a multiple of d")
        if self.grid is None:
            self.grid = basis_grid(self.basis)

    @property
    def d(self) -> int:
        return self.theta0.shape[0]

    @property
    def q(self) -> int:
        return self.eta0.shape[0]

    @property
    def w(self) -> int:
        return self.r // self.d

    @property
    def theta_star(self) -> np.ndarray:
        return self.theta0 + self.tau0 / 2.0

    def cycle(self):
        """Pairs ``(j, a_ij)`` for ``i = 1..w``, ``j = 1..d``."""
        return [(j, (i - 1) * self.d + j) for i in range(1, self.w + 1) for j in range(1, self.d + 1)]

    def b(self, a) -> np.ndarray:
        return (float(a) - 1.0) ** np.arange(1, self.q + 1)

    def lambda0(self, j: int, u):
        beta = eval_basis(self.basis, u)
        return np.exp(beta @ (self.theta0[j - 1] + self.tau0 / 2.0))


def rho0(theta_rows, eta, model: TrueModel, form: str = "resolved") -> float:
    """Population limit of the working objective.

    ``form="resolved"`` weights the ``theta`` term by ``exp(c0)`` only;
    ``form="literal"`` multiplies both linear terms by ``exp(c0) e_j``.
    Only the resolved form has zero gradient at ``(theta0 + tau0/2, eta0)``.
    """
    if form not in ("resolved", "literal"):
        raise ValueError("form must be 'resolved' or 'literal'")
    theta_rows = np.atleast_2d(np.asarray(theta_rows))
    eta = np.asarray(eta)
    nodes, wts = model.grid.nodes, model.grid.weights
    B = eval_basis(model.basis, nodes)
    true_int = np.exp(B @ (model.theta0 + model.tau0 / 2.0).T)  # (G, d)
    e_true = wts @ true_int
    sig_true = B.T @ (wts[:, None] * true_int)  # (p, d)
    e_fit = wts @ np.exp(B @ theta_rows.T)
    total = 0.0
    for j, a in model.cycle():
        b = model.b(a)
        c0 = model.eta0 @ b
        lin = eta @ b
        total -= np.exp(lin) * e_fit[j - 1]
        th_sig = theta_rows[j - 1] @ sig_true[:, j - 1]
        if form == "resolved":
            total += np.exp(c0) * (e_true[j - 1] * lin + th_sig)
        else:
            total += np.exp(c0) * e_true[j - 1] * (lin + th_sig)
    total = total / model.r
    return total if np.iscomplexobj(total) else float(total)


def rho0_gradient(theta_rows, eta, model: TrueModel, form: str = "resolved") -> np.ndarray:
    """Gradient of :func:`rho0` in ``(theta_1..theta_d, eta)`` order by complex steps.

    ``Im f(x + i h e_k) / h`` has no subtractive cancellation, so the result
    is accurate to rounding even where ``rho0`` is large.
    """
    theta_rows = np.atleast_2d(np.asarray(theta_rows, dtype=float))
    d, p = theta_rows.shape
    x0 = np.concatenate([theta_rows.ravel(), np.asarray(eta, float)]).astype(complex)
    h = 1e-30
    g = np.empty(x0.size)
    for k in range(x0.size):
        x = x0.copy()
        x[k] += 1j * h
        g[k] = rho0(x[: d * p].reshape(d, p), x[d * p :], model, form).imag / h
    return g


class LatticeMax(NamedTuple):
    point: np.ndarray
    value: float
    spacing: np.ndarray


def grid_maximize(f: Callable, box: Sequence, resolution: int, budget: int = 10**7) -> LatticeMax:
    """Exhaustive argmax of ``f`` over a regular lattice on ``box``.

    ``box`` is a sequence of ``(lo, hi)`` pairs; each axis gets ``resolution``
    equally spaced points including both ends.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    total = resolution ** len(box)
    if total > budget:
        raise ValueError(f"lattice has {total} points, over the budget of {budget}")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in box]
    best_val, best_pt = -np.inf, None
    for pt in itertools.product(*axes):
        val = f(np.array(pt))
        if val > best_val:
            best_val, best_pt = val, pt
    spacing = np.array([(hi - lo) / (resolution - 1) for lo, hi in box])
    return LatticeMax(np.array(best_pt), float(best_val), spacing)


class MonteCarloEstimate(NamedTuple):
    mean: float
    se: float


def mc_campbell(log_intensity, g: Callable, samples: int, rng, basis: BasisSpec) -> MonteCarloEstimate:
    """Monte Carlo mean of ``sum_k g(u_k)`` over Poisson patterns.

    Patterns are drawn with :func:`pptrend.simulate.sample_pattern`; the
    mean estimates ``int g(u) lambda(u) du``.
    """
    from .simulate import sample_pattern

    if samples < 1:
        raise ValueError("samples must be >= 1")
    totals = np.empty(samples)
    for s in range(samples):
        pts = sample_pattern(log_intensity, basis, rng).points
        totals[s] = float(np.sum(g(pts))) if pts.size else 0.0
    se = totals.std(ddof=1) / np.sqrt(samples) if samples > 1 else np.nan
    return MonteCarloEstimate(float(totals.mean()), float(se))
