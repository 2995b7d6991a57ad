"""
Model-comparison and calibration metrics: WAIC, the D score, AMSE with its
Monte Carlo standard error, the Gaussian KL divergence in precision form,
interval coverage and split-chain R-hat.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError
from .model import ModelSpec, normal_logpdf
from .sampler import PosteriorSamples


@dataclass(frozen=True)
class WaicResult:
    waic: float
    lpd_hat: float
    p_waic: float


@dataclass(frozen=True)
class DScoreResult:
    d: float
    g: float
    p: float


def _draw_matrix(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    x = x.reshape(x.shape[0], -1) if x.ndim > 1 else x[:, None]
    if x.shape[0] < 2:
        raise ValidationError(f"{name} needs at least 2 draws, got {x.shape[0]}")
    return x


def waic(loglik_draws) -> WaicResult:
    """WAIC from an ``(L, n)`` matrix of pointwise log densities.

    ``lpd_hat`` sums the log of the per-point average density and
    ``p_waic`` sums the per-point sample variances (divisor ``L - 1``).
    """
    ll = _draw_matrix(loglik_draws, "waic")
    L = ll.shape[0]
    lpd = float(np.sum(logsumexp(ll, axis=0) - np.log(L)))
    p = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return WaicResult(-2.0 * (lpd - p), lpd, p)


def d_score(y, replicates) -> DScoreResult:
    """``D = G + P`` from posterior predictive replicates of shape ``(L, n)``."""
    rep = _draw_matrix(replicates, "d_score")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != rep.shape[1]:
        raise ValidationError(f"{y.size} outcomes but replicates have {rep.shape[1]} points")
    g = float(np.sum((y - rep.mean(axis=0)) ** 2))
    p = float(np.sum(np.var(rep, axis=0, ddof=1)))
    return DScoreResult(g + p, g, p)


def pointwise_loglik_draws(samples: PosteriorSamples, spec: ModelSpec) -> np.ndarray:
    """``(L, q*k)`` log densities ``log N(y_ij | x'beta_i + w_ij, sigma2_i)``."""
    mean = np.stack([b @ x.T for b, x in zip(samples.beta, spec.X)], axis=1) + samples.w
    ll = normal_logpdf(spec.y[None], mean, samples.sigma2[:, :, None])
    return ll.reshape(samples.n_draws, -1)


def posterior_replicates(samples: PosteriorSamples, spec: ModelSpec,
                         rng: np.random.Generator) -> np.ndarray:
    """One replicate ``y_rep ~ N(x'beta + w, sigma2)`` per retained draw, ``(L, q*k)``."""
    mean = np.stack([b @ x.T for b, x in zip(samples.beta, spec.X)], axis=1) + samples.w
    rep = mean + np.sqrt(samples.sigma2)[:, :, None] * rng.standard_normal(mean.shape)
    return rep.reshape(samples.n_draws, -1)


def amse(true_w, estimates):
    """Average squared error over all datasets and entries, with its MC standard error.

    Parameters
    ----------
    true_w : array_like
        True latent effects, shared by every dataset, or one array per dataset
        when given with a leading dataset axis matching ``estimates``.
    estimates : sequence of array_like
        Posterior means, one per dataset.

    Returns
    -------
    (float, float)
    """
    est = np.asarray([np.asarray(e, dtype=float) for e in estimates])
    truth = np.asarray(true_w, dtype=float)
    if est.ndim == 0 or est.shape[0] == 0:
        raise ValidationError("amse needs at least one dataset")
    if truth.shape != est.shape and truth.shape != est.shape[1:]:
        raise ValidationError(f"truth shape {truth.shape} does not match estimates {est.shape}")
    sq = ((est - truth) ** 2).ravel()
    n = sq.size
    if n < 2:
        raise ValidationError("amse standard error needs at least two entries")
    a = float(sq.mean())
    se = float(np.sqrt(np.sum((sq - a) ** 2) / (n * (n - 1))))
    return a, se


def _chol(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"{name} must be a square matrix")
    try:
        return cholesky(a, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite") from None


def gaussian_kl(q_true, q_model) -> float:
    """KL divergence of ``N(0, q_model^{-1})`` from ``N(0, q_true^{-1})``.

    ``0.5 [log det(Q_true) - log det(Q_model) + tr(Q_model Q_true^{-1}) - n]``.
    """
    q_true = np.atleast_2d(q_true)
    q_model = np.atleast_2d(q_model)
    if q_true.shape != q_model.shape:
        raise ValidationError("precision matrices differ in shape")
    Lt = _chol(q_true, "q_true")
    Lm = _chol(q_model, "q_model")
    logdet = 2.0 * (np.sum(np.log(np.diag(Lt))) - np.sum(np.log(np.diag(Lm))))
    # tr(Q_m Q_t^{-1}) = ||Lt^{-1} Lm||_F^2
    Z = solve_triangular(Lt, Lm, lower=True)
    tr = float(np.sum(Z * Z))
    if np.array_equal(q_true, q_model):
        return 0.0
    return 0.5 * (float(logdet) + tr - q_true.shape[0])


def credible_interval(draws, level: float = 0.95, axis: int = 0) -> np.ndarray:
    """Equal-tailed interval by linear interpolation of order statistics.

    Returns an array whose leading axis holds ``(lower, upper)``.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    a = 0.5 * (1.0 - level)
    return np.quantile(np.asarray(draws, dtype=float), [a, 1.0 - a], axis=axis,
                       method="linear")


def coverage(intervals, truth) -> float:
    """Percentage of ``(lower, upper)`` intervals that contain ``truth``."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.shape[0] == 0:
        raise ValidationError("coverage needs at least one interval")
    truth = np.broadcast_to(np.asarray(truth, dtype=float), (iv.shape[0],))
    hit = (iv[:, 0] <= truth) & (truth <= iv[:, 1])
    return 100.0 * float(np.mean(hit))


def split_rhat(chains) -> float:
    """Potential scale reduction from chains split in half, ``chains`` shaped ``(m, n)``."""
    x = np.atleast_2d(np.asarray(chains, dtype=float))
    n = x.shape[1] // 2
    if n < 2:
        raise ValidationError("split R-hat needs at least 4 draws per chain")
    halves = np.concatenate([x[:, :n], x[:, n:2 * n]])
    W = np.mean(np.var(halves, axis=1, ddof=1))
    B = n * np.var(halves.mean(axis=1), ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def scalar_columns(samples: PosteriorSamples) -> dict:
    """Every non-latent column of a samples table (betas, variances, rho, eta)."""
    return {k: v for k, v in samples.columns().items()
            if not k.startswith("w[") and k != "lp"}


def chain_rhat(parts) -> dict:
    """Split R-hat for each scalar parameter across chains fitted under one ordering."""
    cols = [scalar_columns(p) for p in parts]
    n = min(p.n_draws for p in parts)
    return {name: split_rhat(np.stack([c[name][:n] for c in cols])) for name in cols[0]}


def diagnostics_report(samples: PosteriorSamples, spec: ModelSpec,
                       rng: np.random.Generator) -> dict:
    """``{waic, lpd_hat, p_waic, d, g, p}`` for one fitted model."""
    w = waic(pointwise_loglik_draws(samples, spec))
    d = d_score(spec.y.ravel(), posterior_replicates(samples, spec, rng))
    return {**asdict(w), **asdict(d)}


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")
