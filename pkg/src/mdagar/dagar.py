"""
Univariate DAGAR precision ``Q(rho) = (I - B)^T F (I - B)``.

Every earlier neighbour of region ``j`` gets the same coefficient
``b_j = rho / (1 + (n_j - 1) rho^2)``, so ``B = diag(b) L`` with ``L`` the
strictly lower 0/1 neighbour pattern.  Only ``b``, ``lam`` and ``L`` are
stored.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular

from .errors import ValidationError
from .graph import DirectedNeighborSets

DENSE_CAP = 512


@dataclass(frozen=True, eq=False)
class DagarPrecision:
    rho: float
    b: np.ndarray     # row coefficient shared by all j' in N(j); 0 when N(j) is empty
    lam: np.ndarray   # conditional precisions lambda_j
    lower: sp.csr_matrix
    src: np.ndarray = None
    dst: np.ndarray = None

    @property
    def k(self) -> int:
        return self.lam.shape[0]

    @property
    def B(self) -> sp.csr_matrix:
        return sp.diags(self.b) @ self.lower

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.k:
            raise ValidationError(f"expected trailing dimension {self.k}, got {v.shape}")
        return v

    def residual(self, w) -> np.ndarray:
        """``(I - B) w`` for ``w`` of shape ``(k,)`` or ``(n, k)``."""
        w = self._check(w)
        if w.ndim == 1:
            if self.src is not None:
                return w - self.b * np.bincount(self.dst, weights=w[self.src], minlength=self.k)
            return w - self.b * (self.lower @ w)
        return w - self.b * (self.lower @ w.T).T

    def matvec(self, v) -> np.ndarray:
        """``Q v`` applied factor by factor."""
        u = self.lam * self.residual(v)
        bu = self.b * u
        if bu.ndim == 1:
            return u - self.lower.T @ bu
        return u - (self.lower.T @ bu.T).T

    def quad_form(self, w) -> np.ndarray | float:
        r = self.residual(w)
        if r.ndim == 1:
            return float(np.dot(self.lam * r, r))
        return np.einsum("...j,j,...j->...", r, self.lam, r)

    def log_det(self) -> float:
        return float(np.sum(np.log(self.lam)))

    @cached_property
    def _factor(self) -> np.ndarray:
        # dense unit lower-triangular I - B
        u = -self.b[:, None] * self.lower.toarray()
        u[np.diag_indices(self.k)] = 1.0
        return u

    @cached_property
    def _dense(self) -> np.ndarray:
        u = self._factor
        q = u.T @ (self.lam[:, None] * u)
        q = 0.5 * (q + q.T)
        q.flags.writeable = False
        return q

    def dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        """Dense ``Q`` (read-only, cached); refused above ``cap`` regions."""
        if self.k > cap:
            raise ValidationError(f"dense Q requested for k={self.k} > cap={cap}")
        return self._dense

    def sample(self, rng: np.random.Generator, tau: float = 1.0, size=None) -> np.ndarray:
        """Draw from N(0, (tau Q)^{-1}) by solving ``(I - B) x = z / sqrt(tau lam)``."""
        shape = (self.k,) if size is None else (size, self.k)
        z = rng.standard_normal(shape) / np.sqrt(tau * self.lam)
        if self.k > DENSE_CAP:
            lhs = (sp.identity(self.k, format="csr") - self.B).tocsr()
            rhs = z.T if z.ndim == 2 else z
            x = sp.linalg.spsolve_triangular(lhs, rhs, lower=True)
            return x.T if z.ndim == 2 else x
        x = solve_triangular(self._factor, z.T, lower=True, unit_diagonal=True,
                             check_finite=False)
        return x.T


def dagar_coefficients(n_before: np.ndarray, rho: float):
    """Row coefficients ``b_j`` and conditional precisions ``lambda_j``."""
    n = np.asarray(n_before, dtype=float)
    denom = 1.0 + (n - 1.0) * rho * rho
    b = np.where(n > 0, rho / denom, 0.0)
    lam = denom / (1.0 - rho * rho)
    return b, lam


def build_dagar(ns: DirectedNeighborSets, rho: float) -> DagarPrecision:
    """DAGAR precision for autocorrelation ``rho`` in the open interval (0, 1)."""
    rho = float(rho)
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    b, lam = dagar_coefficients(ns.n_before, rho)
    return DagarPrecision(rho, b, lam, ns.lower, ns.src, ns.dst)
