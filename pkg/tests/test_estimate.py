import copy

import numpy as np
import pytest
from scipy import optimize, stats

from ardnet import geometry
from ardnet.ard import ARDMatrix, TraitConfig, assign_traits, build_ard
from ardnet.errors import (
    AlignmentError,
    EstimationError,
    InvalidInputError,
    NumericalDomainError,
)
from ardnet.estimate import (
    ArdModel,
    FitConfig,
    FitReport,
    LikelihoodGradient,
    Quadrature,
    align_isometry,
    ard_log_likelihood,
    expected_rate,
    fit_mle,
    gauge_fixed_truth,
    likelihood_gradient,
    recovery_error,
)
from ardnet.geometry import Point, Surface, apply_isometry, random_isometry, sample_vmf
from ardnet.netgen import GenConfig, link_value, sample_graph, sample_parameters

S2 = Surface.sphere(2)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_model(seed=0, m=12, K=5, q=64, zeta=1.3, tau_range=(1.0, 6.0)):
    g = rng(seed)
    z = np.asarray(geometry.sample_uniform(S2, g, size=m))
    mu = np.asarray(geometry.sample_uniform(S2, g, size=K))
    return ArdModel(
        nu=g.normal(-0.5, 0.4, m), z=z, zeta=zeta, offset=-0.7, mu=mu,
        tau=g.uniform(*tau_range, K), trait_sizes=g.integers(5, 20, K).astype(float),
        nu_bar=-0.4, quad=Quadrature.make(777, K, q),
    )


def random_counts(model, seed=1):
    lam = model.rate_matrix()
    return ARDMatrix(np.arange(model.m), rng(seed).poisson(lam))


# ------------------------------------------------------------- expected rate


def test_rate_with_zero_zeta_is_exact():
    model = random_model(seed=2)
    model.zeta = 0.0
    model.nu = np.zeros(model.m)
    model.nu_bar = 0.0
    model.offset = 0.0
    lam = model.rate_matrix()
    assert np.allclose(lam, model.trait_sizes[None, :] / 2.0, atol=0)


def test_rate_point_mass_limit():
    model = random_model(seed=3, q=256)
    model.tau = np.full(model.K, 1e8)
    model.trait_sizes = np.full(model.K, 10.0)
    lam = model.rate_matrix()
    D = geometry.distance_matrix(model.z, model.mu, S2)
    direct = 10.0 * link_value(
        model.nu[:, None] + model.nu_bar + model.offset - model.zeta * D, "logistic"
    )
    assert np.abs(lam - direct).max() < 1e-6


def test_rate_matches_high_precision_mc_oracle():
    model = random_model(seed=4, q=256)
    i, k = 3, 2
    lam_fast = expected_rate(model, i, k)
    g = rng(99)
    W = sample_vmf(Point(model.mu[k]), float(model.tau[k]), g, size=500_000)
    d = np.arccos(np.clip(W @ model.z[i], -1, 1))
    vals = model.trait_sizes[k] * link_value(
        model.nu[i] + model.nu_bar + model.offset - model.zeta * d, "logistic"
    )
    se = vals.std(ddof=1) * np.sqrt(1.0 / vals.size + 1.0 / model.quad.q_total)
    assert abs(lam_fast - vals.mean()) < 3 * se


def test_rate_index_bounds():
    model = random_model(seed=5)
    with pytest.raises(InvalidInputError):
        expected_rate(model, model.m, 0)


# ------------------------------------------------------------- likelihood


def test_loglik_all_zero_counts():
    model = random_model(seed=6)
    Y = ARDMatrix(np.arange(model.m), np.zeros((model.m, model.K), dtype=int))
    lam = model.rate_matrix()
    expected = -lam.sum() / (model.m**2 * model.K)
    assert ard_log_likelihood(model, Y) == pytest.approx(expected, rel=1e-12)


def test_loglik_isometry_invariance():
    model = random_model(seed=7, q=128)
    Y = random_counts(model)
    f0 = ard_log_likelihood(model, Y)
    g = rng(8)
    for _ in range(3):
        T = random_isometry(S2, g)
        m2 = copy.deepcopy(model)
        m2.z = apply_isometry(T, model.z)
        m2.mu = apply_isometry(T, model.mu)
        m2.z /= np.linalg.norm(m2.z, axis=1, keepdims=True)
        m2.mu /= np.linalg.norm(m2.mu, axis=1, keepdims=True)
        assert abs(ard_log_likelihood(m2, Y) - f0) < 1e-9


def test_loglik_single_respondent_hand_case():
    # zeta = 0 makes lambda_k = N_k/2 exactly; pick sizes for target rates
    lam_target = np.array([0.5, 1.0, 2.0, 3.0])
    quad = Quadrature.make(1, 4, 32)
    model = ArdModel(
        nu=np.zeros(1), z=np.array([[0.0, 0.0, 1.0]]), zeta=0.0, offset=0.0,
        mu=np.tile([[1.0, 0.0, 0.0]], (4, 1)), tau=np.ones(4),
        trait_sizes=2.0 * lam_target, nu_bar=0.0, quad=quad,
    )
    y = np.array([[0, 1, 2, 3]])
    Y = ARDMatrix(np.array([0]), y)
    oracle = float(np.sum(stats.poisson.logpmf(y[0], lam_target))) / 4.0
    assert ard_log_likelihood(model, Y) == pytest.approx(oracle, rel=1e-12)


def test_loglik_dimension_mismatch():
    model = random_model(seed=9)
    with pytest.raises(InvalidInputError):
        ard_log_likelihood(model, ARDMatrix(np.arange(3), np.zeros((3, 2), dtype=int)))


# ------------------------------------------------------------- gradient


def _fd_direction(model, Y, name, h=1e-5, index=None, direction=None):
    def val(m):
        return ard_log_likelihood(m, Y)

    mp, mm = copy.deepcopy(model), copy.deepcopy(model)
    if name in ("zeta", "offset"):
        setattr(mp, name, getattr(model, name) + h)
        setattr(mm, name, getattr(model, name) - h)
    elif name == "tau":
        mp.tau = model.tau.copy()
        mp.tau[index] += h
        mm.tau = model.tau.copy()
        mm.tau[index] -= h
    elif name in ("z", "mu"):
        arr = getattr(model, name)
        vp, vm = arr.copy(), arr.copy()
        vp[index] = vp[index] + h * direction
        vm[index] = vm[index] - h * direction
        vp[index] /= np.linalg.norm(vp[index])
        vm[index] /= np.linalg.norm(vm[index])
        setattr(mp, name, vp)
        setattr(mm, name, vm)
    else:  # nu
        mp.nu = model.nu.copy()
        mp.nu[index] += h
        mm.nu = model.nu.copy()
        mm.nu[index] -= h
    return (val(mp) - val(mm)) / (2 * h)


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-10)


def test_gradient_matches_finite_differences_at_random_points():
    worst = 0.0
    for trial in range(10):
        model = random_model(seed=100 + trial, m=10, K=5, q=48)
        Y = random_counts(model, seed=200 + trial)
        g = likelihood_gradient(model, Y)
        gen = rng(300 + trial)
        i = int(gen.integers(model.m))
        k = int(gen.integers(model.K))
        checks = [
            (_fd_direction(model, Y, "nu", index=i), g.nu[i]),
            (_fd_direction(model, Y, "zeta"), g.zeta),
            (_fd_direction(model, Y, "offset"), g.offset),
            (_fd_direction(model, Y, "tau", index=k), g.tau[k]),
        ]
        for name, idx in (("z", i), ("mu", k)):
            base = getattr(model, name)[idx]
            e = gen.standard_normal(3)
            e -= (e @ base) * base
            e /= np.linalg.norm(e)
            fd = _fd_direction(model, Y, name, index=idx, direction=e)
            an = getattr(g, name)[idx] @ e
            checks.append((fd, an))
        for fd, an in checks:
            worst = max(worst, _rel(fd, an))
    assert worst < 1e-5, worst


def test_gradient_tangency():
    model = random_model(seed=11)
    Y = random_counts(model)
    g = likelihood_gradient(model, Y)
    assert np.abs(np.sum(g.z * model.z, axis=1)).max() < 1e-10
    assert np.abs(np.sum(g.mu * model.mu, axis=1)).max() < 1e-10


def test_gradient_zero_at_zeta_maximum():
    model = random_model(seed=12, m=14, K=5, q=64)
    Y = random_counts(model, seed=13)

    def neg(zeta):
        m2 = copy.deepcopy(model)
        m2.zeta = float(zeta)
        return -ard_log_likelihood(m2, Y)

    res = optimize.minimize_scalar(neg, bounds=(0.01, 8.0), method="bounded",
                                   options={"xatol": 1e-12})
    m2 = copy.deepcopy(model)
    m2.zeta = float(res.x)
    g = likelihood_gradient(m2, Y)
    assert abs(g.zeta) < 1e-8


# ------------------------------------------------------------- alignment


def test_align_identity_on_equal_sets():
    X = np.asarray(geometry.sample_uniform(S2, rng(14), size=20))
    T, aligned = align_isometry(X, X)
    assert np.allclose(T.matrix, np.eye(3), atol=1e-10)
    assert np.allclose(aligned, X, atol=1e-12)


def test_align_recovers_rotation():
    X = np.asarray(geometry.sample_uniform(S2, rng(15), size=25))
    R = random_isometry(S2, rng(16)).matrix
    T, aligned = align_isometry(X @ R.T, X)
    assert np.abs(aligned - X).max() < 1e-10


def test_align_noisy_matches_svd_oracle():
    g = rng(17)
    X = np.asarray(geometry.sample_uniform(S2, g, size=30))
    R = random_isometry(S2, g).matrix
    noisy = X @ R.T
    for i in range(noisy.shape[0]):
        ax = g.standard_normal(3)
        ax -= (ax @ noisy[i]) * noisy[i]
        ax /= np.linalg.norm(ax)
        noisy[i] = np.cos(0.01) * noisy[i] + np.sin(0.01) * ax
    T, aligned = align_isometry(noisy, X)
    # independent oracle: residual from a direct SVD solution
    M = noisy.T @ X
    U, _, Vt = np.linalg.svd(M)
    T_oracle = Vt.T @ U.T
    res_oracle = np.linalg.norm(noisy @ T_oracle.T - X)
    assert np.linalg.norm(aligned - X) == pytest.approx(res_oracle, rel=1e-10)


def test_align_too_few_points():
    with pytest.raises(AlignmentError):
        align_isometry(np.eye(3)[:2], np.eye(3)[:2])


# ------------------------------------------------------------- recovery metrics


def _toy_problem(seed=18, n=40):
    g = rng(seed)
    theta = sample_parameters(n, GenConfig(target_mean_degree=10.0), g)
    traits = assign_traits(theta.z, 5, TraitConfig(concentration=4.0), g)
    return theta, traits


def test_recovery_zero_at_truth():
    theta, traits = _toy_problem()
    cfg = FitConfig(q_draws=64)
    model = gauge_fixed_truth(theta, traits.centers, traits.concentrations,
                              traits.sizes.astype(float), np.arange(theta.n), cfg)
    fit = FitReport(model=model, loglik=0.0, grad_norm=0.0, iterations=0,
                    restarts_used=1, converged=True, seed=0)
    met = recovery_error(fit, theta)
    assert met.link_rmse < 1e-12
    assert met.distance_correlation == pytest.approx(1.0, abs=1e-12)
    assert met.zeta_rel_error == 0.0
    assert met.nu_rmse < 1e-12


def test_recovery_collapsed_positions_flagged():
    theta, traits = _toy_problem(seed=19)
    cfg = FitConfig(q_draws=32)
    model = gauge_fixed_truth(theta, traits.centers, traits.concentrations,
                              traits.sizes.astype(float), np.arange(theta.n), cfg)
    model.z = np.tile([[0.0, 0.0, 1.0]], (theta.n, 1))
    fit = FitReport(model=model, loglik=0.0, grad_norm=0.0, iterations=0,
                    restarts_used=1, converged=True, seed=0)
    met = recovery_error(fit, theta)
    assert np.isnan(met.distance_correlation)
    assert met.flags["distance_correlation"] == "degenerate"


def test_recovery_jittered_nu_rmse():
    theta, traits = _toy_problem(seed=20)
    cfg = FitConfig(q_draws=32)
    rmses = []
    for rep in range(50):
        model = gauge_fixed_truth(theta, traits.centers, traits.concentrations,
                                  traits.sizes.astype(float), np.arange(theta.n), cfg)
        model.nu = model.nu + rng(1000 + rep).normal(0.0, 0.1, theta.n)
        fit = FitReport(model=model, loglik=0.0, grad_norm=0.0, iterations=0,
                        restarts_used=1, converged=True, seed=0)
        rmses.append(recovery_error(fit, theta).nu_rmse)
    assert abs(np.mean(rmses) - 0.1) < 0.02


# ------------------------------------------------------------- fit basics


def _small_ard(seed=21, n=40, K=5, degree=10.0, zeta=1.0):
    g = rng(seed)
    theta = sample_parameters(n, GenConfig(target_mean_degree=degree, zeta=zeta), g)
    graph = sample_graph(theta, g)
    traits = assign_traits(theta.z, K, TraitConfig(concentration=4.0), g)
    Y = build_ard(graph, traits, np.arange(n))
    return theta, traits, Y


def test_fit_rejects_degenerate_input():
    _, traits, Y = _small_ard()
    zero = ARDMatrix(Y.respondents, np.zeros_like(Y.counts))
    with pytest.raises(EstimationError):
        fit_mle(zero, traits.sizes.astype(float), FitConfig(restarts=1), rng(0))
    with pytest.raises(InvalidInputError):
        fit_mle(ARDMatrix(np.arange(5), Y.counts[:5]), traits.sizes.astype(float),
                FitConfig(restarts=1), rng(0))


def test_fit_is_deterministic():
    _, traits, Y = _small_ard()
    cfg = FitConfig(restarts=1, max_iter=120, q_draws=64)
    r1 = fit_mle(Y, traits.sizes.astype(float), cfg, rng(5))
    r2 = fit_mle(Y, traits.sizes.astype(float), cfg, rng(5))
    assert r1.loglik == r2.loglik
    assert r1.seed == r2.seed
    assert np.array_equal(r1.model.z, r2.model.z)
    assert np.array_equal(r1.model.nu, r2.model.nu)
    assert r1.to_text() == r2.to_text()


def test_fit_from_truth_does_not_decrease_likelihood():
    theta, traits, Y = _small_ard(seed=23, n=120, K=12, degree=26.2, zeta=2.0)
    cfg = FitConfig(restarts=1, max_iter=4000, q_draws=128)
    truth = gauge_fixed_truth(theta, traits.centers, traits.concentrations,
                              traits.sizes.astype(float), np.arange(theta.n), cfg, seed=1)
    fit = fit_mle(Y, traits.sizes.astype(float), cfg, rng(3), initial=truth)
    # evaluate the starting likelihood under the fit's own quadrature
    start_model = copy.deepcopy(truth)
    start_model = ArdModel(
        nu=truth.nu, z=truth.z, zeta=truth.zeta, offset=truth.offset, mu=truth.mu,
        tau=truth.tau, trait_sizes=truth.trait_sizes, nu_bar=truth.nu_bar,
        quad=fit.model.quad, link_kind=truth.link_kind, respondents=truth.respondents,
    )
    ll0 = ard_log_likelihood(start_model, Y)
    assert fit.loglik >= ll0 - 1e-12
    assert fit.grad_norm < 1e-6
    assert fit.converged


def test_fit_report_roundtrip():
    _, traits, Y = _small_ard(seed=24)
    cfg = FitConfig(restarts=1, max_iter=60, q_draws=32)
    rep = fit_mle(Y, traits.sizes.astype(float), cfg, rng(6))
    text = rep.to_text()
    back = FitReport.from_text(text)
    assert back.to_text() == text
    assert back.loglik == rep.loglik
    assert np.array_equal(back.model.z, rep.model.z)
    # the reconstructed quadrature reproduces the reported likelihood
    assert ard_log_likelihood(back.model, Y) == pytest.approx(rep.loglik, abs=1e-9)


def test_gauge_constraints_hold_after_fit():
    _, traits, Y = _small_ard(seed=25)
    cfg = FitConfig(restarts=1, max_iter=80, q_draws=32)
    rep = fit_mle(Y, traits.sizes.astype(float), cfg, rng(7))
    mu = rep.model.mu
    assert np.allclose(mu[0], [0.0, 0.0, 1.0], atol=1e-9)
    assert abs(mu[1, 1]) < 1e-9 and mu[1, 0] > 0
    assert mu[2, 1] > -1e-12
    assert abs(rep.model.nu.sum()) < 1e-9
