"""
Metropolis-within-Gibbs sampler for the MDAGAR hierarchical model.

One sweep updates beta -> sigma2 -> w -> tau -> eta -> gamma, where
``gamma_i = logit(rho_i)`` takes a scalar random-walk Metropolis step and
everything else is drawn from its Gaussian / gamma / inverse-gamma full
conditional.  All update functions mutate the :class:`ParamState` in place.
"""
from __future__ import annotations

import csv
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrs, dtrtrs
from scipy.special import expit, logit

from .errors import NumericalError, ValidationError
from .joint import InteractionCoeffs, apply_interactions
from .model import (
    ModelSpec,
    ParamState,
    _jittered_cholesky,
    initial_state,
    log_posterior_kernel,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 6000
    n_burnin: int = 2000
    thin: int = 1
    seed: int = 0
    rw_step: float = 1.0
    adapt_target: float = 0.35
    adapt_window: int = 100

    def __post_init__(self):
        if not 0 <= self.n_burnin < self.n_iter:
            raise ValidationError(
                f"need 0 <= n_burnin < n_iter, got n_burnin={self.n_burnin}, n_iter={self.n_iter}")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not self.rw_step > 0:
            raise ValidationError("rw_step must be positive")
        if not 0.1 < self.adapt_target < 0.6:
            raise ValidationError("adapt_target must lie in (0.1, 0.6)")
        if self.adapt_window < 1:
            raise ValidationError("adapt_window must be >= 1")

    @property
    def n_draws(self) -> int:
        return (self.n_iter - self.n_burnin) // self.thin


# -- draws from Gaussian full conditionals -----------------------------------

def draw_from_precision(P: np.ndarray, h: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw from ``N(P^{-1} h, P^{-1})``."""
    L, _ = _jittered_cholesky(P)
    mean, _ = dpotrs(L, h, lower=1)
    z, _ = dtrtrs(L, rng.standard_normal(h.shape[0]), lower=1, trans=1)
    return mean + z


def beta_conditional(state: ParamState, spec: ModelSpec, i: int):
    """Precision and linear term of ``beta_i | rest``."""
    pr = spec.prior
    x = spec.X[i]
    P = spec.XtX[i] / state.sigma2[i] + np.eye(x.shape[1]) / pr.v_beta
    h = x.T @ (spec.y[i] - state.w[i]) / state.sigma2[i] + pr.mu_beta / pr.v_beta
    return P, h


def update_beta(state: ParamState, spec: ModelSpec, rng: np.random.Generator) -> None:
    for i in range(spec.q):
        P, h = beta_conditional(state, spec, i)
        state.beta[i] = draw_from_precision(P, h, rng)


def sigma2_conditional(state: ParamState, spec: ModelSpec, i: int):
    """Shape and rate of the inverse-gamma conditional of ``sigma2_i``."""
    pr = spec.prior
    r = spec.y[i] - spec.X[i] @ state.beta[i] - state.w[i]
    return pr.a_sigma + 0.5 * spec.k, pr.b_sigma + 0.5 * float(r @ r)


def update_sigma2(state: ParamState, spec: ModelSpec, rng: np.random.Generator) -> None:
    for i in range(spec.q):
        shape, rate = sigma2_conditional(state, spec, i)
        state.sigma2[i] = 1.0 / rng.gamma(shape, 1.0 / rate)


def _A_dense(spec: ModelSpec, eta: InteractionCoeffs, n: int, i: int) -> np.ndarray:
    A = eta.eta1[n, i] * spec.M_dense
    A.flat[::spec.k + 1] += eta.eta0[n, i]
    return A


def w_conditional(state: ParamState, spec: ModelSpec, i: int):
    """Precision ``G_i^{-1}`` and linear term ``g_i`` of ``w_i | rest``."""
    q, k = spec.q, spec.k
    tau, eta, w = state.tau, state.eta, state.w
    Qi = spec.dagar(state.rho[i]).dense()
    P = tau[i] * Qi
    P.flat[::k + 1] += 1.0 / state.sigma2[i]
    g = (spec.y[i] - spec.X[i] @ state.beta[i]) / state.sigma2[i]
    Mw = w @ spec.M_dense  # M is symmetric
    if i > 0:
        pred = eta.eta0[i, :i] @ w[:i] + eta.eta1[i, :i] @ Mw[:i]
        g = g + tau[i] * (Qi @ pred)
    for n in range(i + 1, q):
        if eta.eta0[n, i] == 0.0 and eta.eta1[n, i] == 0.0:
            continue
        Qn = spec.dagar(state.rho[n]).dense()
        A = _A_dense(spec, eta, n, i)
        P += tau[n] * (A @ (Qn @ A))
        # w_n minus every predictor term except the one through w_i
        c0 = eta.eta0[n, :n].copy()
        c1 = eta.eta1[n, :n].copy()
        c0[i] = c1[i] = 0.0
        others = w[n] - c0 @ w[:n] - c1 @ Mw[:n]
        g = g + tau[n] * (A @ (Qn @ others))
    return P, g


def update_w_block(state: ParamState, spec: ModelSpec, i: int, rng: np.random.Generator) -> None:
    P, g = w_conditional(state, spec, i)
    state.w[i] = draw_from_precision(P, g, rng)


def update_w(state: ParamState, spec: ModelSpec, rng: np.random.Generator) -> None:
    for i in range(spec.q):
        update_w_block(state, spec, i, rng)


def tau_conditional(state: ParamState, spec: ModelSpec):
    """Shapes and rates of the gamma conditionals of every ``tau_i``."""
    pr = spec.prior
    r = state.w - apply_interactions(state.eta, spec.M, state.w)
    rates = np.array([pr.b_tau + 0.5 * spec.dagar(rho).quad_form(ri)
                      for rho, ri in zip(state.rho, r)])
    return np.full(spec.q, pr.a_tau + 0.5 * spec.k), rates


def update_tau(state: ParamState, spec: ModelSpec, rng: np.random.Generator) -> None:
    shape, rate = tau_conditional(state, spec)
    state.tau[:] = rng.gamma(shape, 1.0 / rate)


def build_delta(w_prev: np.ndarray, M) -> np.ndarray:
    """``delta = (Z_1, ..., Z_{i-1})`` with ``Z = (w, M w)``, shape ``(k, 2(i-1))``."""
    w_prev = np.atleast_2d(w_prev)
    zeta = (M @ w_prev.T).T
    return np.stack([w_prev, zeta], axis=-1).transpose(1, 0, 2).reshape(w_prev.shape[1], -1)


def eta_conditional(state: ParamState, spec: ModelSpec, i: int):
    """Precision ``H_i^{-1}`` and linear term ``h_i`` for the eta block of position ``i``."""
    pr = spec.prior
    delta = build_delta(state.w[:i], spec.M)
    QD = spec.dagar(state.rho[i]).dense() @ delta
    P = state.tau[i] * (delta.T @ QD) + np.eye(2 * i) / pr.v_eta
    h = state.tau[i] * (QD.T @ state.w[i]) + pr.mu_eta / pr.v_eta
    return P, h


def update_eta(state: ParamState, spec: ModelSpec, rng: np.random.Generator) -> None:
    for i in range(1, spec.q):
        P, h = eta_conditional(state, spec, i)
        state.eta.set_block_vector(i, draw_from_precision(P, h, rng))


def gamma_log_target(gamma: float, tau: float, resid: np.ndarray, spec: ModelSpec) -> float:
    """Log full conditional of ``gamma = logit(rho)`` up to a constant.

    ``0.5 log|Q(rho)| - tau/2 r'Q(rho)r + log rho(1 - rho)``, the last term
    being the uniform prior carried through the logit change of variables.
    """
    rho = float(expit(gamma))
    if not 0.0 < rho < 1.0:
        return -np.inf
    p = spec.dagar(rho)
    return 0.5 * p.log_det() - 0.5 * tau * p.quad_form(resid) + math.log(rho) + math.log1p(-rho)


def update_gamma(state: ParamState, spec: ModelSpec, step, rng: np.random.Generator) -> np.ndarray:
    """Random-walk Metropolis on each ``gamma_i``; returns acceptance flags."""
    step = np.broadcast_to(np.asarray(step, dtype=float), (spec.q,))
    r = state.w - apply_interactions(state.eta, spec.M, state.w)
    accepted = np.zeros(spec.q, dtype=bool)
    for i in range(spec.q):
        g0 = float(logit(state.rho[i]))
        g1 = g0 + step[i] * rng.standard_normal()
        delta = gamma_log_target(g1, state.tau[i], r[i], spec) \
            - gamma_log_target(g0, state.tau[i], r[i], spec)
        if math.log(rng.random()) < delta:
            rho = float(expit(g1))
            if 0.0 < rho < 1.0:
                state.rho[i] = rho
                accepted[i] = True
    return accepted


def gibbs_sweep(state: ParamState, spec: ModelSpec, step, rng: np.random.Generator) -> np.ndarray:
    update_beta(state, spec, rng)
    update_sigma2(state, spec, rng)
    update_w(state, spec, rng)
    update_tau(state, spec, rng)
    update_eta(state, spec, rng)
    return update_gamma(state, spec, step, rng)


# -- chains ------------------------------------------------------------------

@dataclass(eq=False)
class PosteriorSamples:
    """Retained draws in model order (position ``n`` = disease ``ordering[n]``)."""

    ordering: tuple
    beta: list            # per position, (n_draws, p_i)
    sigma2: np.ndarray    # (n_draws, q)
    tau: np.ndarray
    rho: np.ndarray
    eta0: np.ndarray      # (n_draws, q, q)
    eta1: np.ndarray
    w: np.ndarray         # (n_draws, q, k)
    lp: np.ndarray        # log kernel at each retained draw
    acceptance: np.ndarray = None
    step: np.ndarray = None
    lp_trace: np.ndarray = None
    chain_id: np.ndarray = field(default=None, repr=False)

    @property
    def n_draws(self) -> int:
        return self.sigma2.shape[0]

    @property
    def q(self) -> int:
        return self.sigma2.shape[1]

    @property
    def k(self) -> int:
        return self.w.shape[2]

    def state(self, n: int) -> ParamState:
        return ParamState([b[n] for b in self.beta], self.sigma2[n], self.tau[n], self.rho[n],
                          InteractionCoeffs(self.eta0[n], self.eta1[n]), self.w[n])

    def by_disease(self, name: str):
        """Per-disease draws reindexed to the original disease labels."""
        inv = np.argsort(self.ordering)
        if name == "beta":
            return [self.beta[p] for p in inv]
        arr = getattr(self, name)
        return arr[:, inv]

    def columns(self) -> dict:
        """Flat columns named ``beta[i][p]``, ``w[i][j]`` etc. (1-based original labels)."""
        cols = {}
        order = self.ordering
        for pos, b in enumerate(self.beta):
            for p in range(b.shape[1]):
                cols[f"beta[{order[pos] + 1}][{p + 1}]"] = b[:, p]
        for name in ("sigma2", "tau", "rho"):
            arr = getattr(self, name)
            for pos in range(self.q):
                cols[f"{name}[{order[pos] + 1}]"] = arr[:, pos]
        for name in ("eta0", "eta1"):
            arr = getattr(self, name)
            for pos in range(1, self.q):
                for pp in range(pos):
                    cols[f"{name}[{order[pos] + 1}][{order[pp] + 1}]"] = arr[:, pos, pp]
        for pos in range(self.q):
            for j in range(self.k):
                cols[f"w[{order[pos] + 1}][{j + 1}]"] = self.w[:, pos, j]
        cols["lp"] = self.lp
        return cols

    def to_csv(self, path) -> None:
        cols = self.columns()
        names = list(cols)
        data = np.column_stack([cols[n] for n in names])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(names)
            for row in data:
                out.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "PosteriorSamples":
        """Inverse of :meth:`to_csv`; the ordering is recovered from the eta columns."""
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            names = next(reader)
            data = np.array([[float(v) for v in row] for row in reader if row])
        data = data.reshape(-1, len(names))
        col = {n: data[:, c] for c, n in enumerate(names)}
        pat = re.compile(r"^(\w+)\[(\d+)\](?:\[(\d+)\])?$")
        parsed = {}
        for n in names:
            m = pat.match(n)
            if m:
                parsed[n] = (m.group(1), int(m.group(2)) - 1,
                             None if m.group(3) is None else int(m.group(3)) - 1)
        q = 1 + max(i for kind, i, _ in parsed.values() if kind == "tau")
        n_pred = np.zeros(q, dtype=int)
        for kind, i, _ in parsed.values():
            if kind == "eta0":
                n_pred[i] += 1
        ordering = tuple(int(i) for i in np.argsort(n_pred, kind="stable"))
        if sorted(n_pred) != list(range(q)):
            raise ValidationError(f"{path}: eta columns do not describe a disease ordering")
        pos = {d: n for n, d in enumerate(ordering)}
        nd = data.shape[0]
        k = 1 + max(j for kind, _, j in parsed.values() if kind == "w")
        p_count = np.zeros(q, dtype=int)
        for kind, i, j in parsed.values():
            if kind == "beta":
                p_count[i] = max(p_count[i], j + 1)
        beta = [np.zeros((nd, p_count[d])) for d in ordering]
        out = {name: np.zeros((nd, q)) for name in ("sigma2", "tau", "rho")}
        eta0, eta1 = np.zeros((nd, q, q)), np.zeros((nd, q, q))
        w = np.zeros((nd, q, k))
        for n, (kind, i, j) in parsed.items():
            if kind == "beta":
                beta[pos[i]][:, j] = col[n]
            elif kind in out:
                out[kind][:, pos[i]] = col[n]
            elif kind == "eta0":
                eta0[:, pos[i], pos[j]] = col[n]
            elif kind == "eta1":
                eta1[:, pos[i], pos[j]] = col[n]
            elif kind == "w":
                w[:, pos[i], j] = col[n]
        return cls(ordering, beta, out["sigma2"], out["tau"], out["rho"], eta0, eta1, w,
                   col.get("lp", np.zeros(nd)))


def concat_samples(parts) -> PosteriorSamples:
    parts = list(parts)
    first = parts[0]
    if any(p.ordering != first.ordering for p in parts):
        raise ValidationError("cannot merge chains fitted under different orderings")
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    beta = [np.concatenate([p.beta[i] for p in parts]) for i in range(first.q)]
    chain_id = np.concatenate([np.full(p.n_draws, c) for c, p in enumerate(parts)])
    acc = np.stack([p.acceptance for p in parts]) if first.acceptance is not None else None
    return PosteriorSamples(first.ordering, beta, cat("sigma2"), cat("tau"), cat("rho"),
                            cat("eta0"), cat("eta1"), cat("w"), cat("lp"),
                            acceptance=acc, chain_id=chain_id)


def run_chain(spec: ModelSpec, cfg: ChainConfig, init: ParamState = None) -> PosteriorSamples:
    """Run one chain; step sizes adapt during burn-in only.

    The random-walk scale for each ``gamma_i`` follows a Robbins-Monro
    recursion on its logarithm, updated every ``adapt_window`` burn-in
    iterations toward ``adapt_target`` acceptance.
    """
    rng = np.random.default_rng(cfg.seed)
    state = initial_state(spec) if init is None else init.copy()
    q, k, nd = spec.q, spec.k, cfg.n_draws
    log_step = np.full(q, math.log(cfg.rw_step))
    beta = [np.empty((nd, len(b))) for b in state.beta]
    sigma2, tau, rho = np.empty((nd, q)), np.empty((nd, q)), np.empty((nd, q))
    eta0, eta1 = np.empty((nd, q, q)), np.empty((nd, q, q))
    w = np.empty((nd, q, k))
    lp = np.empty(nd)
    lp_trace = np.empty(cfg.n_iter)
    window_acc = np.zeros(q)
    post_acc = np.zeros(q)
    n_windows = 0
    d = 0
    for it in range(cfg.n_iter):
        try:
            acc = gibbs_sweep(state, spec, np.exp(log_step), rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        lp_trace[it] = log_posterior_kernel(state, spec)
        if it < cfg.n_burnin:
            window_acc += acc
            if (it + 1) % cfg.adapt_window == 0:
                n_windows += 1
                rate = window_acc / cfg.adapt_window
                log_step += (rate - cfg.adapt_target) / math.sqrt(n_windows)
                window_acc[:] = 0
            continue
        post_acc += acc
        if (it - cfg.n_burnin + 1) % cfg.thin == 0 and d < nd:
            for i in range(q):
                beta[i][d] = state.beta[i]
            sigma2[d], tau[d], rho[d] = state.sigma2, state.tau, state.rho
            eta0[d], eta1[d] = state.eta.eta0, state.eta.eta1
            w[d] = state.w
            lp[d] = lp_trace[it]
            d += 1
    acceptance = post_acc / (cfg.n_iter - cfg.n_burnin)
    return PosteriorSamples(spec.ordering, beta, sigma2, tau, rho, eta0, eta1, w, lp,
                            acceptance=acceptance, step=np.exp(log_step), lp_trace=lp_trace)


def chain_seeds(seed: int, n_chains: int) -> list:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n_chains)]


def _run_one(args):
    spec, cfg = args
    return run_chain(spec, cfg)


def run_chains(spec: ModelSpec, cfg: ChainConfig, n_chains: int = 2, jobs: int = 1) -> list:
    """Independent chains with seeds spawned from ``cfg.seed``."""
    from dataclasses import replace
    cfgs = [replace(cfg, seed=s) for s in chain_seeds(cfg.seed, n_chains)]
    tasks = [(spec, c) for c in cfgs]
    if jobs > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]
