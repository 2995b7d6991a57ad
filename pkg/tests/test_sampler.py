import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit

from mdagar import sampler as smp
from mdagar.errors import ValidationError
from mdagar.graph import ArealGraph, grid_graph
from mdagar.joint import InteractionCoeffs, build_A_block
from mdagar.model import Dataset, ModelSpec, ParamState, PriorSpec, initial_state
from mdagar.sampler import (
    ChainConfig,
    PosteriorSamples,
    beta_conditional,
    build_delta,
    chain_seeds,
    concat_samples,
    draw_from_precision,
    eta_conditional,
    gamma_log_target,
    run_chain,
    run_chains,
    sigma2_conditional,
    tau_conditional,
    update_gamma,
    w_conditional,
)

N_MOMENT = 100_000


def scalar_spec(y=2.0, prior=None):
    g = ArealGraph.from_pairs(["a"], [])
    return ModelSpec(Dataset((np.array([y]),), (np.ones((1, 1)),)), g, prior or PriorSpec())


def small_spec(rng, q=2, prior=None, rows=2, cols=2):
    g = grid_graph(rows, cols)
    X = tuple(np.column_stack([np.ones(g.k), rng.standard_normal(g.k)]) for _ in range(q))
    y = tuple(rng.standard_normal(g.k) for _ in range(q))
    return ModelSpec(Dataset(y, X), g, prior or PriorSpec())


def random_state(rng, spec, eta_scale=0.5):
    q = spec.q
    c = InteractionCoeffs(rng.normal(0, eta_scale, (q, q)), rng.normal(0, eta_scale, (q, q)))
    return ParamState([rng.standard_normal(x.shape[1]) for x in spec.X], rng.gamma(2, 0.3, q),
                      rng.gamma(2, 0.5, q), rng.uniform(0.1, 0.9, q), c,
                      rng.standard_normal((q, spec.k)))


def assert_mean_cov(draws, mean, cov, n_se=3.0):
    """Sample mean and covariance within ``n_se`` standard errors of the targets."""
    draws = np.atleast_2d(draws.T).T
    n = draws.shape[0]
    mean, cov = np.atleast_1d(mean), np.atleast_2d(cov)
    se_mean = np.sqrt(np.diag(cov) / n)
    np.testing.assert_array_less(np.abs(draws.mean(axis=0) - mean), n_se * se_mean)
    se_cov = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
    emp = np.atleast_2d(np.cov(draws, rowvar=False))
    np.testing.assert_array_less(np.abs(emp - cov), n_se * se_cov)


def assert_scalar_moments(x, dist, n_se=3.0):
    """Mean and variance of iid draws within ``n_se`` standard errors of ``dist``."""
    n = x.size
    m1, m2, m3, m4 = (dist.moment(r) for r in (1, 2, 3, 4))
    mu4 = m4 - 4 * m1 * m3 + 6 * m1 ** 2 * m2 - 3 * m1 ** 4
    var = dist.var()
    assert abs(x.mean() - m1) < n_se * math.sqrt(var / n)
    assert abs(x.var(ddof=1) - var) < n_se * math.sqrt((mu4 - var ** 2) / n)


# -- closed-form conjugate cases ---------------------------------------------

def test_beta_scalar_conjugate():
    spec = scalar_spec(2.0, PriorSpec(v_beta=1.0))
    s = initial_state(spec)
    s.sigma2[:] = 1.0
    s.w[:] = 0.0
    P, h = beta_conditional(s, spec, 0)
    np.testing.assert_allclose(np.linalg.solve(P, h), [1.0])
    np.testing.assert_allclose(np.linalg.inv(P), [[0.5]])


def test_beta_flat_prior_limit_is_ols(rng):
    spec = small_spec(rng, q=1, prior=PriorSpec(v_beta=1e12), rows=3, cols=3)
    s = random_state(rng, spec)
    P, h = beta_conditional(s, spec, 0)
    ols = np.linalg.lstsq(spec.X[0], spec.y[0] - s.w[0], rcond=None)[0]
    np.testing.assert_allclose(np.linalg.solve(P, h), ols, atol=1e-4)


def test_beta_zero_residual_zero_mean(rng):
    spec = small_spec(rng, q=1)
    s = random_state(rng, spec)
    s.w[0] = spec.y[0]
    P, h = beta_conditional(s, spec, 0)
    np.testing.assert_allclose(np.linalg.solve(P, h), 0.0, atol=1e-15)


def test_sigma2_conditional_parameters(rng):
    spec = small_spec(rng, q=1)
    s = random_state(rng, spec)
    s.w[0] = spec.y[0] - spec.X[0] @ s.beta[0]
    assert sigma2_conditional(s, spec, 0) == (2.0 + 2.0, pytest.approx(0.4, abs=1e-15))
    s.w[0] -= 1.0
    _, rate1 = sigma2_conditional(s, spec, 0)
    s.w[0] -= 2.0  # residual now 3
    _, rate3 = sigma2_conditional(s, spec, 0)
    assert rate3 - 0.4 == pytest.approx(9 * (rate1 - 0.4), rel=1e-13)


def test_w_scalar_conjugate():
    spec = scalar_spec(2.0)
    s = initial_state(spec)
    s.beta[0][:] = 0.0
    s.sigma2[:] = 1.0
    s.tau[:] = 1.0
    P, g = w_conditional(s, spec, 0)
    np.testing.assert_allclose(np.linalg.solve(P, g), [1.0])
    np.testing.assert_allclose(np.linalg.inv(P), [[0.5]])


def test_w_q1_form(rng):
    spec = small_spec(rng, q=1)
    s = random_state(rng, spec)
    P, g = w_conditional(s, spec, 0)
    Q = spec.dagar(s.rho[0]).dense()
    np.testing.assert_allclose(P, s.tau[0] * Q + np.eye(spec.k) / s.sigma2[0])
    np.testing.assert_allclose(g, (spec.y[0] - spec.X[0] @ s.beta[0]) / s.sigma2[0])


def test_w_zero_eta_reduces_to_univariate(rng):
    spec = small_spec(rng, q=2)
    s = random_state(rng, spec)
    s.eta = InteractionCoeffs.zeros(2)
    P, g = w_conditional(s, spec, 0)
    Q = spec.dagar(s.rho[0]).dense()
    np.testing.assert_allclose(P, s.tau[0] * Q + np.eye(spec.k) / s.sigma2[0])


@pytest.mark.parametrize("q", [2, 3, 4])
def test_w_conditional_matches_dense_gaussian(rng, q):
    # condition the joint Gaussian of (w, y) on y and the other w blocks
    spec = small_spec(rng, q=q)
    s = random_state(rng, spec)
    k = spec.k
    Qw = spec.joint(s).dense()
    S_inv = np.kron(np.diag(1 / s.sigma2), np.eye(k))
    post_P = Qw + S_inv
    post_h = S_inv @ (spec.y - spec.mean(s.beta)).ravel()
    for i in range(q):
        idx = np.arange(i * k, (i + 1) * k)
        rest = np.setdiff1d(np.arange(q * k), idx)
        P_ref = post_P[np.ix_(idx, idx)]
        h_ref = post_h[idx] - post_P[np.ix_(idx, rest)] @ s.w.ravel()[rest]
        P, g = w_conditional(s, spec, i)
        np.testing.assert_allclose(P, P_ref, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(g, h_ref, rtol=1e-10, atol=1e-10)


def test_tau_rate_example(path2):
    spec = ModelSpec(Dataset((np.zeros(2),), (np.ones((2, 1)),)), path2)
    s = initial_state(spec)
    s.rho[:] = 0.5
    s.w[0] = [1.0, 1.0]
    shape, rate = tau_conditional(s, spec)
    assert shape[0] == 2.0 + 1.0
    assert rate[0] - 8.0 == pytest.approx(2 / 3, rel=1e-14)
    s.w[0] = 0.0
    assert tau_conditional(s, spec)[1][0] == 8.0


def test_build_delta_examples(path2):
    d = build_delta(np.array([[1.0, 2.0]]), path2.adjacency)
    np.testing.assert_array_equal(d, [[1, 2], [2, 1]])
    iso = ArealGraph.from_pairs("abc", [])
    d = build_delta(np.array([[1.0, 2.0, 3.0]]), iso.adjacency)
    np.testing.assert_array_equal(d[:, 1], 0.0)


def test_delta_identity(rng):
    g = grid_graph(3, 3)
    w = rng.standard_normal((3, g.k))
    c = InteractionCoeffs(rng.standard_normal((4, 4)), rng.standard_normal((4, 4)))
    delta = build_delta(w, g.adjacency)
    assert delta.shape == (g.k, 6)
    ref = sum(build_A_block(c.eta0[3, ip], c.eta1[3, ip], g.adjacency) @ w[ip] for ip in range(3))
    np.testing.assert_allclose(delta @ c.block_vector(3), ref, atol=1e-12)


def test_eta_prior_when_predecessors_zero(rng):
    spec = small_spec(rng, q=3)
    s = random_state(rng, spec)
    s.w[:2] = 0.0
    P, h = eta_conditional(s, spec, 2)
    np.testing.assert_allclose(P, np.eye(4) / spec.prior.v_eta)
    np.testing.assert_allclose(np.linalg.solve(P, h), spec.prior.mu_eta)


def test_eta_flat_prior_limit_is_gls(rng):
    spec = small_spec(rng, q=3, prior=PriorSpec(v_eta=1e12), rows=3, cols=3)
    s = random_state(rng, spec)
    P, h = eta_conditional(s, spec, 2)
    delta = build_delta(s.w[:2], spec.M)
    Q = spec.dagar(s.rho[2]).dense()
    gls = np.linalg.solve(delta.T @ Q @ delta, delta.T @ Q @ s.w[2])
    np.testing.assert_allclose(np.linalg.solve(P, h), gls, atol=1e-4)


def test_eta_dimension(rng):
    spec = small_spec(rng, q=4)
    P, h = eta_conditional(random_state(rng, spec), spec, 3)
    assert P.shape == (6, 6) and h.shape == (6,)


# -- moment tests: 1e5 draws, 3 standard errors -------------------------------

def test_draw_from_precision_moments(rng):
    A = rng.standard_normal((3, 3))
    P = A @ A.T + 3 * np.eye(3)
    h = rng.standard_normal(3)
    draws = np.array([draw_from_precision(P, h, rng) for _ in range(N_MOMENT)])
    cov = np.linalg.inv(P)
    assert_mean_cov(draws, cov @ h, cov)


def test_update_beta_moments(rng):
    spec = small_spec(rng, q=1, rows=3, cols=3)
    s = random_state(rng, spec)
    P, h = beta_conditional(s, spec, 0)
    draws = np.empty((N_MOMENT, 2))
    for n in range(N_MOMENT):
        smp.update_beta(s, spec, rng)
        draws[n] = s.beta[0]
    cov = np.linalg.inv(P)
    assert_mean_cov(draws, cov @ h, cov)


def test_update_sigma2_moments(rng):
    spec = small_spec(rng, q=1, prior=PriorSpec(a_sigma=3.0), rows=3, cols=3)
    s = random_state(rng, spec)
    shape, rate = sigma2_conditional(s, spec, 0)
    draws = np.empty(N_MOMENT)
    for n in range(N_MOMENT):
        smp.update_sigma2(s, spec, rng)
        draws[n] = s.sigma2[0]
    assert_scalar_moments(draws, stats.invgamma(shape, scale=rate))
    assert_scalar_moments(1 / draws, stats.gamma(shape, scale=1 / rate))


def test_update_tau_moments(rng):
    spec = small_spec(rng, q=2)
    s = random_state(rng, spec)
    shape, rate = tau_conditional(s, spec)
    draws = np.empty((N_MOMENT, 2))
    for n in range(N_MOMENT):
        smp.update_tau(s, spec, rng)
        draws[n] = s.tau
    for i in range(2):
        assert_scalar_moments(draws[:, i], stats.gamma(shape[i], scale=1 / rate[i]))


def test_update_w_moments(rng):
    spec = small_spec(rng, q=2)
    s = random_state(rng, spec)
    P, g = w_conditional(s, spec, 1)
    draws = np.empty((N_MOMENT, spec.k))
    for n in range(N_MOMENT):
        smp.update_w_block(s, spec, 1, rng)
        draws[n] = s.w[1]
    cov = np.linalg.inv(P)
    assert_mean_cov(draws, cov @ g, cov)


def test_update_eta_moments(rng):
    spec = small_spec(rng, q=2)
    s = random_state(rng, spec)
    P, h = eta_conditional(s, spec, 1)
    draws = np.empty((N_MOMENT, 2))
    for n in range(N_MOMENT):
        smp.update_eta(s, spec, rng)
        draws[n] = s.eta.block_vector(1)
    cov = np.linalg.inv(P)
    assert_mean_cov(draws, cov @ h, cov)


# -- gamma (logit rho) Metropolis step ----------------------------------------

def test_gamma_zero_step_always_accepts(rng):
    spec = small_spec(rng, q=2)
    s = random_state(rng, spec)
    rho0 = s.rho.copy()
    for _ in range(50):
        acc = update_gamma(s, spec, 0.0, rng)
        assert acc.all()
    np.testing.assert_allclose(s.rho, rho0, rtol=1e-14)


def test_gamma_target_jacobian(rng):
    spec = small_spec(rng, q=1, rows=3, cols=3)
    s = random_state(rng, spec)
    tau, r = s.tau[0], s.w[0]

    def direct(rho):
        Q = tau * spec.dagar(rho).dense()
        return stats.multivariate_normal(np.zeros(spec.k), np.linalg.inv(Q)).logpdf(r)

    for _ in range(5):
        g0, g1 = rng.normal(0, 1.5, 2)
        r0, r1 = expit(g0), expit(g1)
        jac = math.log(r1 * (1 - r1)) - math.log(r0 * (1 - r0))
        ref = direct(r1) - direct(r0) + jac
        got = gamma_log_target(g1, tau, r, spec) - gamma_log_target(g0, tau, r, spec)
        assert got == pytest.approx(ref, rel=1e-8, abs=1e-10)


def _rho_chain(spec, s, rng, n, burn=2000):
    step, out = 2.0, np.empty(n)
    for it in range(burn + n):
        update_gamma(s, spec, step, rng)
        if it >= burn:
            out[it - burn] = s.rho[0]
    return out


def test_gamma_single_region_recovers_uniform_prior(rng):
    spec = scalar_spec()
    s = initial_state(spec)
    s.w[:] = 0.7
    draws = np.sort(_rho_chain(spec, s, rng, 100_000))
    ecdf = np.arange(1, draws.size + 1) / draws.size
    assert np.max(np.abs(ecdf - draws)) < 0.02


def test_gamma_two_region_matches_quadrature(rng, path2):
    spec = ModelSpec(Dataset((np.zeros(2),), (np.ones((2, 1)),)), path2)
    s = initial_state(spec)
    s.tau[:] = 2.0
    s.w[0] = [1.0, 0.8]

    def dens(rho):
        p = spec.dagar(rho)
        return math.exp(0.5 * p.log_det() - 0.5 * 2.0 * p.quad_form(s.w[0]))

    Z = integrate.quad(dens, 0, 1)[0]
    draws = np.sort(_rho_chain(spec, s, rng, 100_000))
    grid = np.linspace(0.01, 0.99, 50)
    cdf = np.array([integrate.quad(dens, 0, x)[0] / Z for x in grid])
    ecdf = np.searchsorted(draws, grid) / draws.size
    assert np.max(np.abs(ecdf - cdf)) < 0.02


# -- chains -------------------------------------------------------------------

def test_chain_config_validation():
    with pytest.raises(ValidationError):
        ChainConfig(n_iter=0, n_burnin=0)
    with pytest.raises(ValidationError):
        ChainConfig(n_iter=10, n_burnin=10)
    with pytest.raises(ValidationError):
        ChainConfig(thin=0)
    assert ChainConfig(n_iter=100, n_burnin=20, thin=3).n_draws == 26


def test_run_chain_deterministic_and_in_support(rng):
    spec = small_spec(rng, q=2)
    cfg = ChainConfig(n_iter=300, n_burnin=100, thin=2, seed=5)
    a, b = run_chain(spec, cfg), run_chain(spec, cfg)
    assert a.n_draws == 100
    for name in ("sigma2", "tau", "rho", "eta0", "eta1", "w", "lp"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert np.all(a.tau > 0) and np.all(a.sigma2 > 0)
    assert np.all((a.rho > 0) & (a.rho < 1))
    c = run_chain(spec, ChainConfig(n_iter=300, n_burnin=100, thin=2, seed=6))
    assert not np.array_equal(a.tau, c.tau)


def test_chain_seeds_and_parallel_runs(rng):
    spec = small_spec(rng, q=2)
    cfg = ChainConfig(n_iter=60, n_burnin=20, seed=3)
    seeds = chain_seeds(3, 2)
    assert seeds == chain_seeds(3, 2) and seeds[0] != seeds[1]
    serial = run_chains(spec, cfg, n_chains=2, jobs=1)
    par = run_chains(spec, cfg, n_chains=2, jobs=2)
    for x, y in zip(serial, par):
        np.testing.assert_array_equal(x.w, y.w)


def test_samples_csv_round_trip(tmp_path, rng):
    spec = small_spec(rng, q=3).reordered((2, 0, 1))
    s = run_chain(spec, ChainConfig(n_iter=30, n_burnin=10, seed=1))
    cols = s.columns()
    assert "eta0[1][3]" in cols and "w[3][4]" in cols and "beta[2][2]" in cols
    np.testing.assert_array_equal(cols["tau[3]"], s.tau[:, 0])
    path = tmp_path / "s.csv"
    s.to_csv(path)
    t = PosteriorSamples.from_csv(path)
    assert t.ordering == (2, 0, 1)
    for name in ("sigma2", "tau", "rho", "eta0", "eta1", "w", "lp"):
        np.testing.assert_array_equal(getattr(t, name), getattr(s, name))
    for a, b in zip(t.beta, s.beta):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(s.by_disease("tau")[:, 2], s.tau[:, 0])


def test_concat_rejects_mixed_orderings(rng):
    spec = small_spec(rng, q=2)
    cfg = ChainConfig(n_iter=20, n_burnin=10)
    a = run_chain(spec, cfg)
    b = run_chain(spec.reordered((1, 0)), cfg)
    assert concat_samples([a, a]).n_draws == 20
    with pytest.raises(ValidationError):
        concat_samples([a, b])


def test_independent_diseases_when_eta_fixed_at_zero(rng, monkeypatch):
    monkeypatch.setattr(smp, "update_eta", lambda state, spec, rng: None)
    g = grid_graph(4, 4)
    X = tuple(np.column_stack([np.ones(g.k), rng.standard_normal(g.k)]) for _ in range(2))
    y = tuple(X[i] @ [1.0, 2.0] + rng.standard_normal(g.k) for i in range(2))
    spec = ModelSpec(Dataset(y, X), g)
    s = run_chain(spec, ChainConfig(n_iter=41_000, n_burnin=1000, thin=20, seed=2))
    np.testing.assert_array_equal(s.eta0, 0.0)
    first = np.column_stack([s.beta[0], s.sigma2[:, 0], s.tau[:, 0], s.rho[:, 0]])
    second = np.column_stack([s.beta[1], s.sigma2[:, 1], s.tau[:, 1], s.rho[:, 1]])
    r = np.corrcoef(first, second, rowvar=False)[:5, 5:]
    assert np.max(np.abs(r)) < 0.1


def batch_means_se(x, n_batches=50):
    b = x.size // n_batches
    m = x[:b * n_batches].reshape(n_batches, b).mean(axis=1)
    return m.std(ddof=1) / math.sqrt(n_batches)


def geweke_successive_conditional(rng, n_cycles):
    """Alternate y | theta and theta | y starting from a prior draw."""
    prior = PriorSpec(a_tau=3.0, b_tau=2.0, a_sigma=5.0, b_sigma=2.0, v_beta=1.0, v_eta=0.25)
    g = grid_graph(2, 2)
    X = tuple(np.column_stack([np.ones(4), rng.standard_normal(4)]) for _ in range(2))
    spec = ModelSpec(Dataset((np.zeros(4), np.zeros(4)), X), g, prior)
    s = ParamState([rng.normal(0, 1, 2) for _ in range(2)],
                   1 / rng.gamma(5.0, 1 / 2.0, 2), rng.gamma(3.0, 1 / 2.0, 2),
                   rng.uniform(0, 1, 2),
                   InteractionCoeffs.from_pairs(2, {(1, 0): tuple(rng.normal(0, 0.5, 2))}))
    s.w = spec.joint(s).sample(rng).reshape(2, 4)
    tau, sig = np.empty((n_cycles, 2)), np.empty((n_cycles, 2))
    for n in range(n_cycles):
        y = spec.mean(s.beta) + s.w + np.sqrt(s.sigma2)[:, None] * rng.standard_normal((2, 4))
        spec = spec.with_outcomes(y)
        smp.gibbs_sweep(s, spec, 1.5, rng)
        tau[n], sig[n] = s.tau, s.sigma2
    return prior, tau, sig


def test_geweke_prior_moments(rng):
    prior, tau, sig = geweke_successive_conditional(rng, 20_000)
    tau_mean = prior.a_tau / prior.b_tau
    sig_mean = prior.b_sigma / (prior.a_sigma - 1)
    for i in range(2):
        assert abs(tau[:, i].mean() - tau_mean) < 3 * batch_means_se(tau[:, i])
        assert abs(sig[:, i].mean() - sig_mean) < 3 * batch_means_se(sig[:, i])
