"""Constraint geometry: Gram matrix, tangent projector and bases, least-squares multiplier."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space, orthogonal_procrustes

from .errors import RankDeficiencyError
from .problem import Problem

__all__ = [
    "GramFactor",
    "TangentBasis",
    "gram",
    "multiplier_ls",
    "projector",
    "tangent_basis",
    "projected_gradient",
    "align_basis",
]

RANK_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class GramFactor:
    """``H = J J^T`` with a Cholesky factor for repeated solves."""

    H: np.ndarray
    J: np.ndarray
    _cho: tuple

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.H)

    @property
    def min_eig(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def max_eig(self) -> float:
        return float(self.eigenvalues[-1])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._cho, rhs, check_finite=False)


def _jac(p: Problem, x) -> np.ndarray:
    return np.asarray(p.jac_h(np.asarray(x, dtype=float)), dtype=float).reshape(p.m, p.n)


def gram(p: Problem, x, J: np.ndarray | None = None) -> GramFactor:
    """Factor the Gram matrix at ``x``; raises :class:`RankDeficiencyError` if singular."""
    if J is None:
        J = _jac(p, x)
    H = J @ J.T
    if not np.all(np.isfinite(H)):
        raise RankDeficiencyError(f"non-finite constraint Jacobian at x={np.asarray(x).tolist()}", point=x)
    if p.m == 1:
        lo = hi = H[0, 0]
    else:
        ev = np.linalg.eigvalsh(H)
        lo, hi = ev[0], ev[-1]
    if lo <= RANK_RTOL * hi or hi <= 0.0:
        raise RankDeficiencyError(
            f"constraint Jacobian rank deficient at x={np.asarray(x).tolist()} "
            f"(min eig {lo:.3e}, max eig {hi:.3e})", point=x)
    return GramFactor(H, J, cho_factor(H, check_finite=False))


def multiplier_ls(p: Problem, x, factor: GramFactor | None = None) -> np.ndarray:
    """Least-squares multiplier ``phi(x) = -H(x)^{-1} J(x) grad f(x)``."""
    G = factor or gram(p, x)
    return -G.solve(G.J @ np.asarray(p.grad_f(np.asarray(x, dtype=float)), dtype=float))


def projector(p: Problem, x, factor: GramFactor | None = None) -> np.ndarray:
    """Orthogonal projector ``I - J^T H^{-1} J`` onto the constraint tangent space."""
    G = factor or gram(p, x)
    return np.eye(p.n) - G.J.T @ G.solve(G.J)


def projected_gradient(p: Problem, x, factor: GramFactor | None = None) -> np.ndarray:
    """Ambient zero-dynamics field ``-P(x) grad f(x)``."""
    x = np.asarray(x, dtype=float)
    G = factor or gram(p, x)
    g = np.asarray(p.grad_f(x), dtype=float)
    return -(g - G.J.T @ G.solve(G.J @ g))


@dataclass(frozen=True)
class TangentBasis:
    """Orthonormal columns spanning ``null(J(x))``."""

    Q: np.ndarray
    anchor: np.ndarray | None = None


def _sign_convention(Q: np.ndarray) -> np.ndarray:
    Q = Q.copy()
    for j in range(Q.shape[1]):
        nz = np.flatnonzero(np.abs(Q[:, j]) > 1e-12)
        if nz.size and Q[nz[0], j] < 0:
            Q[:, j] = -Q[:, j]
    return Q


def align_basis(Q: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Rotate ``Q`` by the orthogonal Procrustes solution closest to ``anchor``."""
    R, _ = orthogonal_procrustes(Q, anchor, check_finite=False)
    return Q @ R


def tangent_basis(p: Problem, x, anchor: TangentBasis | np.ndarray | None = None) -> TangentBasis:
    """Pointwise orthonormal tangent basis.

    With ``anchor`` the basis is Procrustes-aligned to it, which keeps bases
    continuous between nearby points. Without it, the first nonzero entry of
    each column is made positive.
    """
    G = gram(p, x)
    Q = null_space(G.J)
    if anchor is None:
        return TangentBasis(_sign_convention(Q))
    A = anchor.Q if isinstance(anchor, TangentBasis) else np.asarray(anchor, dtype=float)
    return TangentBasis(align_basis(Q, A), anchor=A)
