"""
Data, priors, parameter state and log densities for one disease ordering.

Conventions
-----------
* Every normal density here takes a *variance* (or covariance).  Where the
  model is naturally written with a precision (``tau Q(rho)``, ``Q_w``) the
  conversion is made at the call site.
* ``tau_i ~ Gamma(a_tau, rate=b_tau)`` (equivalently ``1/tau_i`` is
  inverse-gamma), ``sigma2_i ~ IG(a_sigma, b_sigma)`` with ``sigma2_i`` a
  variance, ``beta_i ~ N(mu_beta, v_beta I)``, each eta ~ ``N(mu_eta, v_eta)``,
  ``rho_i ~ U(0, 1)``.
* A :class:`ParamState` lives in *model order*: position ``n`` holds the
  disease ``ordering[n]`` of the original data.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve
from scipy.linalg.lapack import dpotrf

from .dagar import DagarPrecision, build_dagar
from .errors import NumericalError, ValidationError
from .graph import ArealGraph, directed_neighbor_sets
from .joint import InteractionCoeffs, JointPrecision

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcomes ``y[i]`` (length k) and designs ``X[i]`` (k x p_i) per disease."""

    y: tuple
    X: tuple
    disease_labels: tuple = None
    region_labels: tuple = None

    def __post_init__(self):
        y = tuple(np.asarray(v, dtype=float).ravel() for v in self.y)
        X = tuple(np.atleast_2d(np.asarray(x, dtype=float)) for x in self.X)
        if len(y) == 0 or len(y) != len(X):
            raise ValidationError("need one design matrix per outcome vector")
        k = y[0].size
        for i, (yi, Xi) in enumerate(zip(y, X)):
            if yi.size != k or Xi.shape[0] != k:
                raise ValidationError(f"disease {i}: all diseases must share k={k} regions")
            if not (np.all(np.isfinite(yi)) and np.all(np.isfinite(Xi))):
                raise ValidationError(f"disease {i}: non-finite outcome or covariate")
            if np.linalg.matrix_rank(Xi) < Xi.shape[1]:
                raise ValidationError(f"disease {i}: design matrix is not full column rank")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        if self.disease_labels is None:
            object.__setattr__(self, "disease_labels", tuple(f"d{i + 1}" for i in range(len(y))))
        if self.region_labels is None:
            object.__setattr__(self, "region_labels", tuple(str(j + 1) for j in range(k)))

    @property
    def q(self) -> int:
        return len(self.y)

    @property
    def k(self) -> int:
        return self.y[0].size

    @property
    def p(self) -> tuple:
        return tuple(x.shape[1] for x in self.X)


@dataclass(frozen=True)
class PriorSpec:
    a_tau: float = 2.0
    b_tau: float = 8.0
    a_sigma: float = 2.0
    b_sigma: float = 0.4
    mu_beta: float = 0.0
    v_beta: float = 1000.0
    mu_eta: float = 0.0
    v_eta: float = 100.0

    def __post_init__(self):
        for name in ("a_tau", "b_tau", "a_sigma", "b_sigma", "v_beta", "v_eta"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"prior field {name} must be positive")


PRIOR_PRESETS = {
    # simulation study: Gamma(2, 8) on tau, IG(2, 0.4) on sigma2
    "simulation": PriorSpec(),
    # areal cancer analysis: Gamma(2, 0.1) on tau, IG(2, 1) on sigma2
    "data_analysis": PriorSpec(b_tau=0.1, b_sigma=1.0),
}


@dataclass
class ParamState:
    beta: list
    sigma2: np.ndarray
    tau: np.ndarray
    rho: np.ndarray
    eta: InteractionCoeffs
    w: np.ndarray = None  # (q, k); None for collapsed states

    def __post_init__(self):
        self.beta = [np.asarray(b, dtype=float).ravel() for b in self.beta]
        self.sigma2 = np.asarray(self.sigma2, dtype=float).ravel()
        self.tau = np.asarray(self.tau, dtype=float).ravel()
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)

    @property
    def q(self) -> int:
        return self.tau.size

    def in_support(self) -> bool:
        return bool(np.all(self.sigma2 > 0) and np.all(self.tau > 0)
                    and np.all(self.rho > 0) and np.all(self.rho < 1)
                    and np.all(np.isfinite(self.eta.eta0)) and np.all(np.isfinite(self.eta.eta1)))

    def copy(self) -> "ParamState":
        return ParamState([b.copy() for b in self.beta], self.sigma2.copy(), self.tau.copy(),
                          self.rho.copy(), self.eta.copy(),
                          None if self.w is None else self.w.copy())


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A dataset, prior and graph under one disease ordering.

    ``ordering[n]`` is the (0-based) original disease placed at hierarchy
    position ``n``.
    """

    dataset: Dataset
    graph: ArealGraph
    prior: PriorSpec = field(default_factory=PriorSpec)
    ordering: tuple = None

    def __post_init__(self):
        q = self.dataset.q
        order = tuple(range(q)) if self.ordering is None else tuple(int(o) for o in self.ordering)
        if sorted(order) != list(range(q)):
            raise ValidationError(f"ordering {order} is not a permutation of {q} diseases")
        object.__setattr__(self, "ordering", order)
        if self.graph.k != self.dataset.k:
            raise ValidationError(
                f"graph has {self.graph.k} regions but data has {self.dataset.k}")

    @property
    def q(self) -> int:
        return self.dataset.q

    @property
    def k(self) -> int:
        return self.dataset.k

    @cached_property
    def y(self) -> np.ndarray:
        """Outcomes in model order, shape ``(q, k)``."""
        return np.stack([self.dataset.y[o] for o in self.ordering])

    @cached_property
    def X(self) -> tuple:
        return tuple(self.dataset.X[o] for o in self.ordering)

    @cached_property
    def XtX(self) -> tuple:
        return tuple(x.T @ x for x in self.X)

    @cached_property
    def neighbor_sets(self):
        return directed_neighbor_sets(self.graph)

    @cached_property
    def M(self):
        return self.graph.adjacency

    @cached_property
    def M_dense(self) -> np.ndarray:
        return self.graph.adjacency_dense()

    @cached_property
    def _dagar_cache(self) -> dict:
        return {}

    def dagar(self, rho: float) -> DagarPrecision:
        cache = self._dagar_cache
        key = float(rho)
        p = cache.get(key)
        if p is None:
            if len(cache) > 64:
                cache.clear()
            p = cache[key] = build_dagar(self.neighbor_sets, key)
        return p

    def joint(self, state: ParamState) -> JointPrecision:
        return JointPrecision(state.tau, tuple(self.dagar(r) for r in state.rho),
                              state.eta, self.M)

    def mean(self, beta) -> np.ndarray:
        return np.stack([x @ b for x, b in zip(self.X, beta)])

    def reordered(self, ordering) -> "ModelSpec":
        return replace(self, ordering=tuple(ordering))

    def with_outcomes(self, y_model_order) -> "ModelSpec":
        """Same model with new outcomes given in model order; graph caches are shared."""
        y_model_order = np.asarray(y_model_order, dtype=float)
        y = [None] * self.q
        for n, o in enumerate(self.ordering):
            y[o] = y_model_order[n]
        d = self.dataset
        new = replace(self, dataset=Dataset(tuple(y), d.X, d.disease_labels, d.region_labels))
        for name in ("neighbor_sets", "M", "M_dense", "_dagar_cache", "XtX"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new


def normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def gamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1) * np.log(x) - rate * x


def invgamma_logpdf(x, shape, rate):
    return shape * math.log(rate) - math.lgamma(shape) - (shape + 1) * np.log(x) - rate / x


def pointwise_loglik(state: ParamState, spec: ModelSpec) -> np.ndarray:
    """``log N(y_ij | x_ij' beta_i + w_ij, sigma2_i)`` as a ``(q, k)`` array."""
    mean = spec.mean(state.beta) + state.w
    out = normal_logpdf(spec.y, mean, state.sigma2[:, None])
    if not np.all(np.isfinite(out)):
        raise ValidationError("non-finite pointwise log-likelihood")
    return out


def log_prior_w(state: ParamState, spec: ModelSpec) -> float:
    return spec.joint(state).logpdf(state.w)


def log_hyperprior(state: ParamState, prior: PriorSpec) -> float:
    """Normalized log prior of (beta, sigma2, tau, eta, rho); ``-inf`` off support."""
    if not state.in_support():
        return -np.inf
    lp = 0.0
    for b in state.beta:
        lp += float(np.sum(normal_logpdf(b, prior.mu_beta, prior.v_beta)))
    lp += float(np.sum(invgamma_logpdf(state.sigma2, prior.a_sigma, prior.b_sigma)))
    lp += float(np.sum(gamma_logpdf(state.tau, prior.a_tau, prior.b_tau)))
    eta = state.eta.to_vector()
    lp += float(np.sum(normal_logpdf(eta, prior.mu_eta, prior.v_eta)))
    return lp  # uniform rho contributes log 1


def log_posterior_kernel(state: ParamState, spec: ModelSpec) -> float:
    """Unnormalized log posterior of the full state including ``w``."""
    lp = log_hyperprior(state, spec.prior)
    if not np.isfinite(lp):
        return -np.inf
    return lp + log_prior_w(state, spec) + float(np.sum(pointwise_loglik(state, spec)))


def _jittered_cholesky(a: np.ndarray):
    """Lower Cholesky factor in ``cho_factor`` form; one jitter retry on failure.

    The jitter is ``1e-10 * mean(diag(a))``.
    """
    c, info = dpotrf(a, lower=1, clean=1, overwrite_a=0)
    if info != 0:
        jitter = 1e-10 * float(np.mean(np.diag(a)))
        c, info = dpotrf(a + jitter * np.eye(a.shape[0]), lower=1, clean=1)
        if info != 0:
            raise NumericalError("matrix not positive definite after jitter")
    return c, True


def integrated_loglik(state: ParamState, spec: ModelSpec) -> float:
    """``log N(y | X beta, Q_w^{-1} + diag(sigma2) (x) I_k)`` with ``w`` integrated out.

    Evaluated in precision form: with ``S = diag(sigma2) (x) I`` and
    ``P = Q_w + S^{-1}``, ``det(Q_w^{-1} + S) = det(S) det(P) / det(Q_w)`` and
    ``(Q_w^{-1} + S)^{-1} = S^{-1} - S^{-1} P^{-1} S^{-1}``.
    """
    if not state.in_support():
        return -np.inf
    jp = spec.joint(state)
    q, k = spec.q, spec.k
    r = (spec.y - spec.mean(state.beta)).ravel()
    s_inv = np.repeat(1.0 / state.sigma2, k)
    P = jp.dense()
    P[np.diag_indices_from(P)] += s_inv
    c = _jittered_cholesky(P)
    u = s_inv * r
    quad = float(r @ u - u @ cho_solve(c, u, check_finite=False))
    logdet_P = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    logdet_cov = k * float(np.sum(np.log(state.sigma2))) + logdet_P - jp.log_det()
    return -0.5 * (q * k * LOG_2PI + logdet_cov + quad)


def initial_state(spec: ModelSpec) -> ParamState:
    """Deterministic starting point: damped least squares beta, w = 0, prior means."""
    pr = spec.prior
    beta = []
    for x, xtx, y in zip(spec.X, spec.XtX, spec.y):
        lhs = xtx + np.eye(x.shape[1]) / pr.v_beta
        beta.append(np.linalg.solve(lhs, x.T @ y + pr.mu_beta / pr.v_beta))
    q = spec.q
    s2 = pr.b_sigma / (pr.a_sigma - 1) if pr.a_sigma > 1 else pr.b_sigma / (pr.a_sigma + 1)
    return ParamState(beta, np.full(q, s2), np.full(q, pr.a_tau / pr.b_tau),
                      np.full(q, 0.5), InteractionCoeffs.zeros(q), np.zeros((q, spec.k)))


# -- data file ---------------------------------------------------------------

def load_dataset(path, graph: ArealGraph, add_intercept: bool = True,
                 standardize: bool = False) -> Dataset:
    """Read ``region,disease,outcome,x1,...,xp`` rows.

    Diseases are ordered by first appearance.  A disease may use fewer
    covariates than there are ``x`` columns by leaving its trailing cells
    empty in every row; any other empty cell is an error.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty data file") from None
        if header[:3] != ["region", "disease", "outcome"]:
            raise ValidationError(f"{path}: header must start with region,disease,outcome")
        rows = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            region, disease, outcome = (c.strip() for c in row[:3])
            xs = [c.strip() for c in row[3:]]
            if not outcome:
                raise ValidationError(f"{path}:{lineno}: missing outcome")
            n_x = len(xs)
            while n_x and not xs[n_x - 1]:
                n_x -= 1
            if any(not c for c in xs[:n_x]):
                raise ValidationError(f"{path}:{lineno}: incomplete covariate row")
            if disease not in rows:
                rows[disease] = {}
                order.append(disease)
            if region in rows[disease]:
                raise ValidationError(f"{path}:{lineno}: duplicate row for {region}/{disease}")
            try:
                rows[disease][region] = (float(outcome), [float(c) for c in xs[:n_x]], lineno)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not order:
        raise ValidationError(f"{path}: no data rows")
    ys, Xs = [], []
    known = set(graph.labels)
    for disease in order:
        got = rows[disease]
        unknown = sorted(set(got) - known)
        missing = sorted(known - set(got))
        if unknown or missing:
            raise ValidationError(
                f"disease {disease!r}: labels not in adjacency {unknown}; "
                f"adjacency regions without data {missing}")
        widths = {len(v[1]) for v in got.values()}
        if len(widths) != 1:
            raise ValidationError(f"disease {disease!r}: inconsistent covariate count")
        y = np.array([got[r][0] for r in graph.labels])
        X = np.array([got[r][1] for r in graph.labels]).reshape(graph.k, widths.pop())
        if standardize and X.shape[1]:
            sd = X.std(axis=0)
            X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        if add_intercept:
            X = np.column_stack([np.ones(graph.k), X])
        ys.append(y)
        Xs.append(X)
    return Dataset(tuple(ys), tuple(Xs), tuple(order), graph.labels)


def write_dataset(d: Dataset, path) -> None:
    width = max(d.p)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["region", "disease", "outcome"] + [f"x{n + 1}" for n in range(width)])
        for i, lab in enumerate(d.disease_labels):
            for j, reg in enumerate(d.region_labels):
                xs = [repr(float(v)) for v in d.X[i][j]]
                out.writerow([reg, lab, repr(float(d.y[i][j]))] + xs + [""] * (width - len(xs)))
