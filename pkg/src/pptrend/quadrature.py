"""Composite Gauss-Legendre quadrature and exponential-spline moment integrals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .basis import BasisSpec, eval_basis
from .errors import ConfigurationError, DimensionError, InvalidDomainError

__all__ = ["QuadGrid", "Moments", "make_grid", "basis_grid", "integrate", "moments"]


@dataclass(frozen=True, eq=False)
class QuadGrid:
    nodes: np.ndarray
    weights: np.ndarray
    panels: int
    nodes_per_panel: int
    domain: tuple
    # design matrix cache, keyed by basis
    _designs: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def design(self, basis: BasisSpec) -> np.ndarray:
        """Basis values at the nodes, shape ``(size, p)``; cached per basis."""
        mat = self._designs.get(basis)
        if mat is None:
            mat = eval_basis(basis, self.nodes)
            mat.setflags(write=False)
            self._designs[basis] = mat
        return mat


def make_grid(
    domain: Sequence[float],
    panels: int = 1,
    nodes_per_panel: int = 10,
    breaks: Optional[Sequence[float]] = None,
) -> QuadGrid:
    """Gauss-Legendre rule with ``nodes_per_panel`` nodes on each panel.

    Panels are equal subintervals of ``domain`` unless ``breaks`` (the full
    list of panel boundaries, endpoints included) is supplied.
    """
    lo, hi = (float(x) for x in domain)
    if not lo < hi:
        raise InvalidDomainError(f"domain must satisfy L < U, got [{lo}, {hi}]")
    if not 2 <= nodes_per_panel <= 20:
        raise ConfigurationError("nodes_per_panel must be in 2..20")
    if breaks is None:
        if panels < 1:
            raise ConfigurationError("panels must be >= 1")
        edges = np.linspace(lo, hi, int(panels) + 1)
    else:
        edges = np.unique(np.asarray(breaks, dtype=float))
        if edges[0] != lo or edges[-1] != hi or edges.size < 2:
            raise ConfigurationError("panel breaks must start at L and end at U")
    x, w = np.polynomial.legendre.leggauss(int(nodes_per_panel))
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadGrid(
        nodes=nodes,
        weights=weights,
        panels=edges.size - 1,
        nodes_per_panel=int(nodes_per_panel),
        domain=(lo, hi),
    )


DEFAULT_REFINE = 6


def basis_grid(basis: BasisSpec, nodes_per_panel: int = 10, refine: int = DEFAULT_REFINE) -> QuadGrid:
    """Grid whose panels subdivide each knot interval of ``basis`` into ``refine`` equal parts.

    Every panel lies inside one polynomial piece, so the integrands are
    smooth on each panel.  Six subpanels of ten nodes keep ``exp(theta @ beta)``
    integrals stable to about 1e-10 relative under panel doubling for
    coefficients up to 10 in magnitude; a single panel per knot interval can
    be off by about 1% there.
    """
    if int(refine) != refine or refine < 1:
        raise ConfigurationError("refine must be a positive integer")
    bp = basis.breakpoints
    if refine > 1:
        bp = np.concatenate(
            [np.linspace(a, b, refine + 1)[:-1] for a, b in zip(bp[:-1], bp[1:])] + [bp[-1:]]
        )
    return make_grid(basis.domain, nodes_per_panel=nodes_per_panel, breaks=bp)


def integrate(values, grid: QuadGrid) -> float:
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.size:
        raise DimensionError(f"expected {grid.size} node values, got {values.shape[0]}")
    return float(grid.weights @ values) if values.ndim == 1 else grid.weights @ values


@dataclass(frozen=True, eq=False)
class Moments:
    """Integrals of ``exp(theta @ beta)`` against ``1``, ``beta`` and ``beta beta^T``."""

    e: float
    sigma: np.ndarray
    Sigma: np.ndarray


def moments(basis: BasisSpec, grid: QuadGrid, theta) -> Moments:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.p,):
        raise DimensionError(f"theta must have length {basis.p}, got shape {theta.shape}")
    B = grid.design(basis)
    wl = grid.weights * np.exp(B @ theta)
    Sigma = (B * wl[:, None]).T @ B
    return Moments(e=float(wl.sum()), sigma=B.T @ wl, Sigma=(Sigma + Sigma.T) / 2.0)
