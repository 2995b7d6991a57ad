"""
Joint MDAGAR precision over ``q`` diseases and ``k`` regions.

Latent effects are stacked disease-major, ``w = (w_1, ..., w_q)``, and
arrays of shape ``(q, k)`` are used wherever a block view is convenient.
``w_i = sum_{i' < i} A_{ii'} w_{i'} + eps_i`` with
``A_{ii'} = eta0[i, i'] I + eta1[i, i'] M`` and ``eps_i ~ N(0, (tau_i Q(rho_i))^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_factor, cho_solve

from .dagar import DagarPrecision, build_dagar
from .errors import NumericalError, ValidationError
from .graph import ArealGraph, directed_neighbor_sets

JOINT_DENSE_CAP = 2048


@dataclass
class InteractionCoeffs:
    """Strictly lower-triangular ``(q, q)`` tables of eta0 / eta1.

    Entry ``[i, i']`` with ``i' < i`` links disease position ``i`` to the
    earlier position ``i'``; entries on or above the diagonal are ignored.
    """

    eta0: np.ndarray
    eta1: np.ndarray

    def __post_init__(self):
        self.eta0 = np.array(self.eta0, dtype=float)
        self.eta1 = np.array(self.eta1, dtype=float)
        if self.eta0.shape != self.eta1.shape or self.eta0.ndim != 2 \
                or self.eta0.shape[0] != self.eta0.shape[1]:
            raise ValidationError("eta0 and eta1 must be matching square tables")
        mask = np.tril(np.ones_like(self.eta0, dtype=bool), k=-1)
        self.eta0[~mask] = 0.0
        self.eta1[~mask] = 0.0

    @property
    def q(self) -> int:
        return self.eta0.shape[0]

    @classmethod
    def zeros(cls, q: int) -> "InteractionCoeffs":
        return cls(np.zeros((q, q)), np.zeros((q, q)))

    @classmethod
    def from_pairs(cls, q: int, pairs: dict) -> "InteractionCoeffs":
        """``pairs[(i, i')] = (eta0, eta1)`` for ``i' < i`` (0-based positions)."""
        out = cls.zeros(q)
        for (i, ip), (e0, e1) in pairs.items():
            if not 0 <= ip < i < q:
                raise ValidationError(f"eta index ({i}, {ip}) is not strictly lower")
            out.eta0[i, ip], out.eta1[i, ip] = e0, e1
        return out

    def block_vector(self, i: int) -> np.ndarray:
        """``eta_i = (eta0_{i0}, eta1_{i0}, ..., eta0_{i,i-1}, eta1_{i,i-1})``."""
        return np.column_stack([self.eta0[i, :i], self.eta1[i, :i]]).ravel()

    def set_block_vector(self, i: int, vec) -> None:
        vec = np.asarray(vec, dtype=float).reshape(i, 2)
        self.eta0[i, :i] = vec[:, 0]
        self.eta1[i, :i] = vec[:, 1]

    def to_vector(self) -> np.ndarray:
        if self.q < 2:
            return np.zeros(0)
        return np.concatenate([self.block_vector(i) for i in range(1, self.q)])

    @classmethod
    def from_vector(cls, q: int, vec) -> "InteractionCoeffs":
        out = cls.zeros(q)
        vec = np.asarray(vec, dtype=float)
        pos = 0
        for i in range(1, q):
            out.set_block_vector(i, vec[pos:pos + 2 * i])
            pos += 2 * i
        if pos != vec.size:
            raise ValidationError(f"eta vector has length {vec.size}, expected {pos}")
        return out

    def copy(self) -> "InteractionCoeffs":
        return InteractionCoeffs(self.eta0.copy(), self.eta1.copy())


def build_A_block(eta0: float, eta1: float, M) -> sp.csr_matrix:
    """``eta0 I + eta1 M`` as a sparse matrix."""
    M = sp.csr_matrix(M)
    return (eta0 * sp.identity(M.shape[0], format="csr") + eta1 * M).tocsr()


def apply_interactions(coeffs: InteractionCoeffs, M, w: np.ndarray) -> np.ndarray:
    """Rows ``sum_{i' < i} A_{ii'} w_{i'}`` for ``w`` of shape ``(q, k)``.

    Uses ``A_{ii'} w_{i'} = eta0 w_{i'} + eta1 (M w_{i'})`` so the blocks are
    never materialized.
    """
    zeta = (M @ w.T).T
    return coeffs.eta0 @ w + coeffs.eta1 @ zeta


@dataclass(frozen=True, eq=False)
class JointPrecision:
    tau: np.ndarray
    dagar: tuple[DagarPrecision, ...]
    coeffs: InteractionCoeffs
    M: sp.csr_matrix = field(repr=False)

    @property
    def q(self) -> int:
        return len(self.dagar)

    @property
    def k(self) -> int:
        return self.M.shape[0]

    @property
    def rho(self) -> np.ndarray:
        return np.array([d.rho for d in self.dagar])

    def _blocks(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.q * self.k:
            raise ValidationError(f"expected {self.q * self.k} entries, got {v.size}")
        return v.reshape(self.q, self.k)

    def residuals(self, w) -> np.ndarray:
        """``(I - A) w`` as a ``(q, k)`` array."""
        w = self._blocks(w)
        return w - apply_interactions(self.coeffs, self.M, w)

    def matvec(self, v) -> np.ndarray:
        r = self.residuals(v)
        u = np.stack([t * d.matvec(ri) for t, d, ri in zip(self.tau, self.dagar, r)])
        # (I - A)^T u; every A_{ii'} is symmetric
        zeta = (self.M @ u.T).T
        out = u - self.coeffs.eta0.T @ u - self.coeffs.eta1.T @ zeta
        return out.ravel()

    def quad_form(self, w) -> float:
        r = self.residuals(w)
        return float(sum(t * d.quad_form(ri) for t, d, ri in zip(self.tau, self.dagar, r)))

    def log_det(self) -> float:
        return float(sum(self.k * np.log(t) + d.log_det() for t, d in zip(self.tau, self.dagar)))

    def logpdf(self, w) -> float:
        """``log N(w | 0, Q_w^{-1})`` from the factored conditional form."""
        n = self.q * self.k
        return 0.5 * self.log_det() - 0.5 * self.quad_form(w) - 0.5 * n * np.log(2 * np.pi)

    def _check_cap(self):
        if self.q * self.k > JOINT_DENSE_CAP:
            raise ValidationError(
                f"dense joint matrix of size {self.q * self.k} exceeds cap {JOINT_DENSE_CAP}")

    def i_minus_a(self) -> np.ndarray:
        self._check_cap()
        q, k = self.q, self.k
        Md = self.M.toarray()
        out = np.eye(q * k)
        for i in range(q):
            for ip in range(i):
                blk = self.coeffs.eta0[i, ip] * np.eye(k) + self.coeffs.eta1[i, ip] * Md
                out[i * k:(i + 1) * k, ip * k:(ip + 1) * k] = -blk
        return out

    def dense(self) -> np.ndarray:
        """Dense ``Q_w = (I - A)^T Lambda (I - A)``."""
        U = self.i_minus_a()
        k = self.k
        LU = np.empty_like(U)
        for i, (t, d) in enumerate(zip(self.tau, self.dagar)):
            LU[i * k:(i + 1) * k] = t * (d.dense() @ U[i * k:(i + 1) * k])
        q = U.T @ LU
        return 0.5 * (q + q.T)

    @cached_property
    def covariance(self) -> np.ndarray:
        """Dense ``Q_w^{-1}``."""
        try:
            c = cho_factor(self.dense(), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("joint precision is not positive definite") from exc
        cov = cho_solve(c, np.eye(self.q * self.k))
        return 0.5 * (cov + cov.T)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        """Exact draws from N(0, Q_w^{-1}), shape ``(q*k,)`` or ``(size, q*k)``.

        Each ``eps_i`` comes from a triangular solve against the DAGAR factor;
        ``(I - A) w = eps`` is then solved by forward block substitution.
        """
        n = 1 if size is None else size
        w = np.empty((n, self.q, self.k))
        for i, (t, d) in enumerate(zip(self.tau, self.dagar)):
            eps = d.sample(rng, tau=t, size=n)
            for ip in range(i):
                e0, e1 = self.coeffs.eta0[i, ip], self.coeffs.eta1[i, ip]
                if e0 or e1:
                    eps = eps + e0 * w[:, ip] + e1 * (self.M @ w[:, ip].T).T
            w[:, i] = eps
        w = w.reshape(n, self.q * self.k)
        return w[0] if size is None else w


def build_joint(taus, rhos, coeffs: InteractionCoeffs, g: ArealGraph, ns=None) -> JointPrecision:
    taus = np.asarray(taus, dtype=float).ravel()
    rhos = np.asarray(rhos, dtype=float).ravel()
    if taus.shape != rhos.shape or coeffs.q != taus.size:
        raise ValidationError(
            f"shape mismatch: {taus.size} taus, {rhos.size} rhos, q={coeffs.q} coefficients")
    if np.any(taus <= 0):
        raise ValidationError("every tau must be positive")
    ns = directed_neighbor_sets(g) if ns is None else ns
    dag = tuple(build_dagar(ns, r) for r in rhos)
    return JointPrecision(taus, dag, coeffs, g.adjacency)


def bivariate_closed_form(p: JointPrecision) -> np.ndarray:
    """Block formula for the two-disease precision.

    ``[[t1 Q1 + t2 A^T Q2 A, -t2 A^T Q2], [-t2 Q2 A, t2 Q2]]``.  The
    off-diagonal blocks are negative because ``w_2 = A w_1 + eps_2`` enters
    the density through ``(w_2 - A w_1)``; with a plus sign the implied
    cross-disease covariance would flip sign.
    """
    if p.q != 2:
        raise ValidationError(f"closed form needs q=2, got q={p.q}")
    t1, t2 = p.tau
    Q1, Q2 = p.dagar[0].dense(), p.dagar[1].dense()
    A = build_A_block(p.coeffs.eta0[1, 0], p.coeffs.eta1[1, 0], p.M).toarray()
    return np.block([[t1 * Q1 + t2 * A.T @ Q2 @ A, -t2 * A.T @ Q2],
                     [-t2 * Q2 @ A, t2 * Q2]])


def cross_moments(d1, d2_diag, tau1, tau2, eta0, eta1, M):
    """Within-region covariance, variances and correlation for two diseases.

    ``d1`` is the full ``Q(rho_1)^{-1}`` and ``d2_diag`` the diagonal of
    ``Q(rho_2)^{-1}``.  Returns arrays over all regions.
    """
    d1 = np.asarray(d1, dtype=float)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    djj = np.diag(d1)
    s = np.einsum("jl,lj->j", Md, d1)             # sum_{j' ~ j} d_{jj'}
    ss = np.einsum("jl,lm,mj->j", Md, d1, Md)     # sum_{j' ~ j} sum_{j'' ~ j} d_{j''j'}
    cov = (eta0 * djj + eta1 * s) / tau1
    var1 = djj / tau1
    var2 = (eta0 * (eta0 * djj + eta1 * s) + eta1 * (eta0 * s + eta1 * ss)) / tau1 \
        + np.asarray(d2_diag) / tau2
    corr = cov / np.sqrt(var1 * var2)
    return cov, var1, var2, corr


def within_region_cross_moments(p: JointPrecision, j=None):
    """``(cov, var1, var2, corr)`` of ``(w_1j, w_2j)``; all regions when ``j`` is None."""
    if p.q != 2:
        raise ValidationError(f"within-region moments need q=2, got q={p.q}")
    d1 = np.linalg.inv(p.dagar[0].dense())
    d2 = np.diag(np.linalg.inv(p.dagar[1].dense()))
    out = cross_moments(d1, d2, p.tau[0], p.tau[1],
                        p.coeffs.eta0[1, 0], p.coeffs.eta1[1, 0], p.M)
    if j is None:
        return out
    return tuple(float(x[j]) for x in out)
