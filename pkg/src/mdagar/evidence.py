"""
Marginal likelihoods by bridge sampling, posterior model probabilities and
model averaging over disease orderings.

The bridge target is the collapsed posterior of
``theta = (beta, sigma2, tau, eta, rho)`` with ``w`` integrated out.  Draws
are mapped to an unconstrained space (log for variances and precisions,
logit for ``rho``), a Gaussian proposal is moment-matched on one part of
the draws, and the remaining draws feed the fixed-point iteration of
Meng and Wong, carried out on ``log p(y)`` directly.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, log_expit, logsumexp

from .errors import NumericalError, ValidationError
from .joint import InteractionCoeffs
from .model import (
    ModelSpec,
    ParamState,
    _jittered_cholesky,
    integrated_loglik,
    log_hyperprior,
)
from .sampler import ChainConfig, PosteriorSamples, concat_samples, run_chains

log = logging.getLogger(__name__)

MAX_ORDERING_Q = 6


# -- unconstrained parameterization ------------------------------------------

@dataclass(frozen=True)
class ParamTransform:
    """Bijection between ``ParamState`` (without ``w``) and a flat real vector.

    Layout: ``beta_1, ..., beta_q, log sigma2, log tau, eta, logit rho`` with
    ``eta`` in :meth:`InteractionCoeffs.to_vector` order.
    """

    p: tuple  # covariate count per position

    @property
    def q(self) -> int:
        return len(self.p)

    @property
    def n_eta(self) -> int:
        return self.q * (self.q - 1)

    @property
    def dim(self) -> int:
        return sum(self.p) + 3 * self.q + self.n_eta

    @classmethod
    def for_spec(cls, spec: ModelSpec) -> "ParamTransform":
        return cls(tuple(x.shape[1] for x in spec.X))

    def forward(self, state: ParamState) -> np.ndarray:
        return np.concatenate([*state.beta, np.log(state.sigma2), np.log(state.tau),
                               state.eta.to_vector(), np.log(state.rho) - np.log1p(-state.rho)])

    def inverse(self, x) -> tuple[ParamState, float]:
        """State and ``log |d constrained / d unconstrained|``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValidationError(f"expected vector of length {self.dim}, got {x.shape}")
        q = self.q
        pos = 0
        beta = []
        for p in self.p:
            beta.append(x[pos:pos + p])
            pos += p
        ls2, ltau = x[pos:pos + q], x[pos + q:pos + 2 * q]
        pos += 2 * q
        eta = InteractionCoeffs.from_vector(q, x[pos:pos + self.n_eta])
        g = x[pos + self.n_eta:]
        rho = expit(g)
        log_jac = float(np.sum(ls2) + np.sum(ltau) + np.sum(log_expit(g) + log_expit(-g)))
        return ParamState(beta, np.exp(ls2), np.exp(ltau), rho, eta), log_jac

    def names(self, ordering=None) -> list:
        """Labels with 1-based original disease indices."""
        order = range(self.q) if ordering is None else ordering
        out = [f"beta[{order[i] + 1}][{j + 1}]" for i, p in enumerate(self.p) for j in range(p)]
        out += [f"log_sigma2[{order[i] + 1}]" for i in range(self.q)]
        out += [f"log_tau[{order[i] + 1}]" for i in range(self.q)]
        for i in range(1, self.q):
            for ip in range(i):
                out += [f"eta0[{order[i] + 1}][{order[ip] + 1}]",
                        f"eta1[{order[i] + 1}][{order[ip] + 1}]"]
        out += [f"logit_rho[{order[i] + 1}]" for i in range(self.q)]
        return out


def unconstrained_draws(samples: PosteriorSamples) -> np.ndarray:
    """Retained draws as an ``(n_draws, dim)`` array in unconstrained space."""
    rho = samples.rho
    parts = list(samples.beta) + [np.log(samples.sigma2), np.log(samples.tau)]
    q = samples.q
    for i in range(1, q):
        parts.append(np.stack([samples.eta0[:, i, :i], samples.eta1[:, i, :i]], axis=-1)
                     .reshape(samples.n_draws, 2 * i))
    parts.append(np.log(rho) - np.log1p(-rho))
    return np.column_stack(parts)


# -- proposal ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProposalDensity:
    mean: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of the covariance

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = solve_triangular(self.chol, (x - self.mean).T, lower=True, check_finite=False)
        log_det = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        return -0.5 * (self.dim * math.log(2 * math.pi) + log_det + np.sum(z * z, axis=0))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T


def fit_proposal(draws, split: float = 0.5):
    """Gaussian fitted to the first ``split`` fraction of the draws.

    Returns ``(proposal, held_out)`` where ``held_out`` is the disjoint
    remainder used as the posterior pool of the bridge estimator.
    """
    if isinstance(draws, PosteriorSamples):
        draws = unconstrained_draws(draws)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    n, dim = draws.shape
    if not 0.0 < split < 1.0:
        raise ValidationError(f"split must lie in (0, 1), got {split}")
    if n < 2 * dim + 2:
        raise ValidationError(f"need at least {2 * dim + 2} draws for dimension {dim}, got {n}")
    n_fit = int(round(split * n))
    n_fit = min(max(n_fit, dim + 1), n - 1)
    fit, held = draws[:n_fit], draws[n_fit:]
    mean = fit.mean(axis=0)
    cov = np.atleast_2d(np.cov(fit, rowvar=False))
    if not np.all(np.diag(cov) > 0):
        raise NumericalError("degenerate proposal covariance: a parameter has zero variance")
    L, _ = _jittered_cholesky(cov)
    return ProposalDensity(mean, np.tril(L)), held


# -- bridge sampling ---------------------------------------------------------

@dataclass
class BridgeEstimate:
    log_ml: float
    n_iterations: int
    converged: bool
    N1: int
    N2: int
    trace: np.ndarray
    rel_error: float = math.nan
    l1: np.ndarray = field(default=None, repr=False)
    l2: np.ndarray = field(default=None, repr=False)

    @property
    def mc_se(self) -> float:
        """Approximate MC standard error of ``log_ml`` (delta method)."""
        return self.rel_error


def _spectral_factor(x: np.ndarray) -> float:
    """Ratio of batch-means long-run variance to the plain variance."""
    n = x.size
    v = np.var(x, ddof=1) if n > 1 else 0.0
    if n < 16 or v == 0:
        return 1.0
    b = int(math.sqrt(n))
    m = n // b
    means = x[:m * b].reshape(m, b).mean(axis=1)
    return max(1.0, b * np.var(means, ddof=1) / v)


def _relative_error(l1, l2, log_ml, s1, s2) -> float:
    """Squared-relative-error approximation for the optimal bridge estimate."""
    with np.errstate(over="ignore"):
        f1 = 1.0 / (s1 + s2 * np.exp(-(l2 - log_ml)))
        f2 = 1.0 / (s1 * np.exp(l1 - log_ml) + s2)
    N1, N2 = l1.size, l2.size
    t1 = np.var(f1, ddof=1) / np.mean(f1) ** 2 / N2
    t2 = _spectral_factor(f2) * np.var(f2, ddof=1) / np.mean(f2) ** 2 / N1
    return float(math.sqrt(t1 + t2))


def bridge_from_ratios(l1, l2, tol: float = 1e-10, max_iter: int = 1000) -> BridgeEstimate:
    """Optimal bridge estimate from log density ratios.

    ``l1`` holds ``log q(theta) - log g(theta)`` at held-out posterior draws
    and ``l2`` the same at proposal draws, ``q`` being the unnormalized
    posterior and ``g`` the proposal.
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    if l1.size == 0 or l2.size == 0:
        raise ValidationError("both sample pools must be nonempty")
    if not np.all(np.isfinite(l1)):
        raise NumericalError(f"posterior pool: {int(np.sum(~np.isfinite(l1)))} non-finite ratios")
    if np.any(np.isnan(l2)) or np.any(l2 == np.inf):
        raise NumericalError("proposal pool: NaN or +inf ratios")
    if not np.any(np.isfinite(l2)):
        raise NumericalError("proposal pool: every ratio is -inf")
    N1, N2 = l1.size, l2.size
    log_s1 = math.log(N1 / (N1 + N2))
    log_s2 = math.log(N2 / (N1 + N2))
    shift = float(np.median(l1))
    a1, a2 = l1 - shift, l2 - shift
    logr = 0.0
    trace = []
    converged = False
    for _ in range(max_iter):
        num = logsumexp(a2 - np.logaddexp(log_s1 + a2, log_s2 + logr)) - math.log(N2)
        den = logsumexp(-np.logaddexp(log_s1 + a1, log_s2 + logr)) - math.log(N1)
        new = float(num - den)
        if not math.isfinite(new):
            raise NumericalError("bridge iteration produced a non-finite estimate")
        trace.append(new + shift)
        done = abs(new - logr) < tol
        logr = new
        if done:
            converged = True
            break
    log_ml = logr + shift
    est = BridgeEstimate(log_ml, len(trace), converged, N1, N2, np.array(trace), l1=l1, l2=l2)
    est.rel_error = _relative_error(l1, l2, log_ml, N1 / (N1 + N2), N2 / (N1 + N2))
    if not converged:
        log.warning("bridge sampling did not converge in %d iterations", max_iter)
    return est


def bridge_estimate(log_density, held_out, proposal: ProposalDensity, n_proposal: int = None,
                    rng: np.random.Generator = None, tol: float = 1e-10,
                    max_iter: int = 1000) -> BridgeEstimate:
    """Bridge-sampling estimate of ``log int exp(log_density(x)) dx``.

    Parameters
    ----------
    log_density : callable
        Unnormalized log target on unconstrained vectors, Jacobian included.
    held_out : ndarray, shape (N1, dim)
        Posterior draws not used to fit ``proposal``.
    proposal : ProposalDensity
    n_proposal : int, optional
        Number of proposal draws ``N2``; defaults to ``N1``.
    rng : numpy.random.Generator, optional
    tol, max_iter : float, int
        Stop when successive log estimates differ by less than ``tol``.

    Returns
    -------
    BridgeEstimate
    """
    rng = np.random.default_rng() if rng is None else rng
    held_out = np.atleast_2d(np.asarray(held_out, dtype=float))
    n2 = held_out.shape[0] if n_proposal is None else int(n_proposal)
    if n2 < 1:
        raise ValidationError("n_proposal must be >= 1")
    prop = proposal.sample(rng, n2)
    q1 = np.array([log_density(x) for x in held_out])
    q2 = np.array([log_density(x) for x in prop])
    return bridge_from_ratios(q1 - proposal.logpdf(held_out), q2 - proposal.logpdf(prop),
                              tol=tol, max_iter=max_iter)


def collapsed_log_density(spec: ModelSpec):
    """``x -> log p(y | theta) + log p(theta) + log |J|`` on unconstrained vectors."""
    tr = ParamTransform.for_spec(spec)

    def f(x):
        state, log_jac = tr.inverse(x)
        lp = log_hyperprior(state, spec.prior)
        if not np.isfinite(lp):
            return -np.inf
        try:
            ll = integrated_loglik(state, spec)
        except NumericalError:
            return -np.inf
        return ll + lp + log_jac

    return f


def model_log_evidence(spec: ModelSpec, samples: PosteriorSamples, split: float = 0.5,
                       n_proposal: int = None, seed=None, tol: float = 1e-10,
                       max_iter: int = 1000) -> BridgeEstimate:
    """Bridge-sampling ``log p(y | ordering)`` from posterior draws of that ordering."""
    if tuple(samples.ordering) != tuple(spec.ordering):
        raise ValidationError(
            f"samples ordering {samples.ordering} differs from model ordering {spec.ordering}")
    proposal, held = fit_proposal(unconstrained_draws(samples), split)
    return bridge_estimate(collapsed_log_density(spec), held, proposal, n_proposal,
                           np.random.default_rng(seed), tol, max_iter)


# -- model probabilities and averaging ---------------------------------------

@dataclass
class ModelPosterior:
    log_ml: np.ndarray
    prior: np.ndarray
    prob: np.ndarray

    @property
    def best(self) -> int:
        return int(np.argmax(self.prob))


def posterior_model_probs(log_ml, prior=None) -> ModelPosterior:
    """Normalize ``log_ml + log prior`` with log-sum-exp.

    A ``-inf`` or NaN entry (failed model) receives probability zero.
    """
    log_ml = np.asarray(log_ml, dtype=float).ravel()
    T = log_ml.size
    if T == 0:
        raise ValidationError("no model evidence supplied")
    prior = np.full(T, 1.0 / T) if prior is None else np.asarray(prior, dtype=float).ravel()
    if prior.shape != (T,):
        raise ValidationError(f"{T} models but {prior.size} prior probabilities")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-10:
        raise ValidationError("model prior probabilities must be nonnegative and sum to 1")
    usable = np.where(np.isnan(log_ml), -np.inf, log_ml)
    with np.errstate(divide="ignore"):
        a = usable + np.log(prior)
    if not np.any(np.isfinite(a)):
        raise ValidationError("no model has a finite evidence estimate")
    prob = np.exp(a - logsumexp(a))
    prob /= prob.sum()
    return ModelPosterior(log_ml, prior, prob)


def bma_expectation(means, probs):
    """``sum_t E(Delta | M_t, y) p(M_t | y)`` for equally shaped per-model means."""
    probs = np.asarray(probs, dtype=float).ravel()
    means = [np.asarray(m, dtype=float) for m in means]
    if len(means) != probs.size or not means:
        raise ValidationError(f"{len(means)} model means but {probs.size} probabilities")
    shape = means[0].shape
    if any(m.shape != shape for m in means):
        raise ValidationError("per-model means differ in shape")
    out = np.zeros(shape)
    for m, p in zip(means, probs):
        if p > 0:
            out = out + p * m
    return out


def enumerate_orderings(q: int) -> list:
    """All ``q!`` orderings (0-based) in lexicographic order."""
    if q < 1:
        raise ValidationError("q must be >= 1")
    if q > MAX_ORDERING_Q:
        raise ValidationError(f"q={q} exceeds the cap of {MAX_ORDERING_Q} diseases")
    return [tuple(p) for p in itertools.permutations(range(q))]


def posterior_means(samples: PosteriorSamples) -> dict:
    """Posterior means of ``beta`` (list) and ``w`` (q, k) in original disease order."""
    beta = [b.mean(axis=0) for b in samples.by_disease("beta")]
    w = samples.by_disease("w").mean(axis=0)
    return {"beta": beta, "w": w}


# -- ordering comparison pipeline --------------------------------------------

@dataclass(frozen=True)
class BridgeConfig:
    split: float = 0.5
    n_proposal: int = None
    tol: float = 1e-10
    max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValidationError("bridge split must lie in (0, 1)")
        if self.n_proposal is not None and self.n_proposal < 1:
            raise ValidationError("bridge n_proposal must be >= 1")
        if not self.tol > 0:
            raise ValidationError("bridge tol must be positive")
        if self.max_iter < 1:
            raise ValidationError("bridge max_iter must be >= 1")


@dataclass
class OrderingFit:
    ordering: tuple
    estimate: BridgeEstimate = None
    means: dict = None
    acceptance: np.ndarray = None
    error: str = None

    @property
    def log_ml(self) -> float:
        return math.nan if self.estimate is None else self.estimate.log_ml


@dataclass
class OrderComparison:
    fits: list
    posterior: ModelPosterior
    bma_beta: list
    bma_w: np.ndarray

    @property
    def best_ordering(self) -> tuple:
        return self.fits[self.posterior.best].ordering


def fit_ordering(spec: ModelSpec, ordering, chain: ChainConfig, n_chains: int = 1,
                 bridge: BridgeConfig = BridgeConfig(), keep_samples: bool = False):
    """Fit one ordering and estimate its evidence; errors are captured, not raised."""
    ordering = tuple(ordering)
    try:
        sp_o = spec.reordered(ordering)
        parts = run_chains(sp_o, chain, n_chains=n_chains, jobs=1)
        samples = concat_samples(_interleave_halves(parts)) if n_chains > 1 else parts[0]
        est = model_log_evidence(sp_o, samples, bridge.split, bridge.n_proposal,
                                 seed=[chain.seed, 7919], tol=bridge.tol,
                                 max_iter=bridge.max_iter)
        acc = np.stack([p.acceptance for p in parts])
        fit = OrderingFit(ordering, est, posterior_means(samples), acc)
        return (fit, samples) if keep_samples else fit
    except (NumericalError, ValidationError) as exc:
        log.warning("ordering %s failed: %s", ordering, exc)
        fit = OrderingFit(ordering, error=str(exc))
        return (fit, None) if keep_samples else fit


def _interleave_halves(parts):
    """Put the first half of every chain before the second halves.

    With the default split this fits the proposal on the early half of each
    chain and keeps the late halves as the held-out pool.
    """
    out = []
    for half in (0, 1):
        for p in parts:
            n = p.n_draws // 2
            sl = slice(0, n) if half == 0 else slice(n, p.n_draws)
            out.append(PosteriorSamples(
                p.ordering, [b[sl] for b in p.beta], p.sigma2[sl], p.tau[sl], p.rho[sl],
                p.eta0[sl], p.eta1[sl], p.w[sl], p.lp[sl], acceptance=p.acceptance))
    return out


def _fit_task(args):
    return fit_ordering(*args)


def compare_orderings(spec: ModelSpec, chain: ChainConfig, n_chains: int = 1,
                      bridge: BridgeConfig = BridgeConfig(), orderings=None,
                      prior=None, jobs: int = 1) -> OrderComparison:
    """Fit every ordering, convert evidences to probabilities and average.

    Parameters
    ----------
    spec : ModelSpec
        Data, graph and prior; its own ordering is ignored.
    chain : ChainConfig
        Chain settings shared by every ordering (same seed for each).
    n_chains : int
    bridge : BridgeConfig
    orderings : list of tuple, optional
        Defaults to all ``q!`` orderings.
    prior : array_like, optional
        Model prior probabilities; uniform by default.
    jobs : int
        Worker processes across orderings.

    Returns
    -------
    OrderComparison
        Fits in input order, posterior model probabilities, and BMA means of
        ``beta`` and ``w`` indexed by the original disease labels.
    """
    orderings = enumerate_orderings(spec.q) if orderings is None else [tuple(o) for o in orderings]
    tasks = [(spec, o, chain, n_chains, bridge) for o in orderings]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            fits = list(ex.map(_fit_task, tasks))
    else:
        fits = [_fit_task(t) for t in tasks]
    ok = [f for f in fits if f.error is None]
    if not ok:
        raise NumericalError("every ordering failed: " + "; ".join(f.error for f in fits))
    post = posterior_model_probs([f.log_ml for f in fits], prior)
    probs = post.prob
    # failed fits carry probability zero; borrow a valid mean as placeholder
    filler = ok[0].means
    means = [f.means if f.error is None else filler for f in fits]
    bma_beta = [bma_expectation([m["beta"][d] for m in means], probs) for d in range(spec.q)]
    bma_w = bma_expectation([m["w"] for m in means], probs)
    return OrderComparison(fits, post, bma_beta, bma_w)


def ordering_label(ordering) -> str:
    """1-based bracket form, e.g. ``[1,3,2]``."""
    return "[" + ",".join(str(o + 1) for o in ordering) + "]"


def parse_ordering(text: str, q: int = None) -> tuple:
    """Inverse of :func:`ordering_label`; accepts ``2,1`` or ``[2,1]`` (1-based)."""
    body = text.strip().strip("[]")
    try:
        vals = tuple(int(s) - 1 for s in body.split(",") if s.strip())
    except ValueError:
        raise ValidationError(f"cannot parse ordering {text!r}") from None
    n = len(vals) if q is None else q
    if sorted(vals) != list(range(n)):
        raise ValidationError(f"ordering {text!r} is not a permutation of 1..{n}")
    return vals


def write_evidence_csv(result: OrderComparison, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["model_index", "ordering", "log_ml", "mc_iterations", "posterior_prob"])
        for t, (f, p) in enumerate(zip(result.fits, result.posterior.prob), start=1):
            it = "" if f.estimate is None else f.estimate.n_iterations
            out.writerow([t, ordering_label(f.ordering), repr(float(f.log_ml)), it, repr(float(p))])


def read_evidence_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{"model_index": int(r["model_index"]), "ordering": parse_ordering(r["ordering"]),
             "log_ml": float(r["log_ml"]),
             "mc_iterations": int(r["mc_iterations"]) if r["mc_iterations"] else None,
             "posterior_prob": float(r["posterior_prob"])} for r in rows]
