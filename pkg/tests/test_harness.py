import numpy as np
import pytest

from ardnet.errors import ConfigError, EstimationError, InvalidInputError
from ardnet.harness import (
    ManyNetConfig,
    StatContext,
    TaxonomyConfig,
    compute_stats,
    expected_statistic,
    expected_statistics,
    many_networks_experiment,
    ols_fit,
    scaled_mse_taxonomy,
)
from ardnet.netgen import GenConfig, sample_graph, sample_parameters


def rng(seed=0):
    return np.random.default_rng(seed)


def theta_small(n=30, degree=6.0, seed=0):
    return sample_parameters(n, GenConfig(target_mean_degree=degree), rng(seed))


# ------------------------------------------------------------ expectations


def test_link_expectation_matches_probability():
    theta = theta_small()
    P = theta.probability_matrix()
    pairs = np.array([[0, 1], [2, 5], [7, 19]])
    ctx = StatContext(pairs=pairs)
    b = 400
    mean, se = expected_statistic(theta, "link", b, rng(1), ctx)
    for c, (i, j) in enumerate(pairs):
        p = P[i, j]
        assert abs(mean[c] - p) < 3 * np.sqrt(p * (1 - p) / b) + 1e-9


def test_degree_density_expectation_matches_analytic_mean():
    theta = theta_small(seed=2)
    P = theta.probability_matrix()
    b = 400
    mean, se = expected_statistic(theta, "degree_density", b, rng(3))
    analytic = P.sum(axis=1) / theta.n
    sd = np.sqrt((P * (1 - P)).sum(axis=1)) / theta.n
    assert np.all(np.abs(mean - analytic) < 4 * sd / np.sqrt(b) + 1e-9)


def test_expectation_on_deterministic_graph_has_zero_se():
    # all probabilities ~1: every draw is the complete graph
    theta = theta_small(seed=4)
    theta.offset = 60.0
    mean, se = expected_statistic(theta, "degree_density", 2, rng(5))
    assert np.all(se == 0.0)
    assert np.allclose(mean, (theta.n - 1) / theta.n)


def test_expectation_requires_two_draws():
    with pytest.raises(InvalidInputError):
        expected_statistic(theta_small(), "degree_density", 1, rng(6))


def test_flagged_keys_are_excluded_per_draw():
    # near-empty graphs: clustering undefined for low-degree nodes on some draws
    theta = theta_small(n=20, degree=1.5, seed=7)
    mean, se, cnt = expected_statistics(theta, ["clustering"], 50, rng(8),
                                        StatContext())["clustering"]
    assert cnt.max() <= 50
    assert (cnt < 50).any()


# ------------------------------------------------------------ OLS


def test_ols_exact_on_linear_data():
    g = rng(9)
    X = np.column_stack([np.ones(30), g.normal(size=30), g.normal(size=30)])
    beta = np.array([1.0, -2.5, 0.75])
    y = X @ beta
    coef, rvar = ols_fit(X, y)
    assert np.allclose(coef, beta, atol=1e-12)
    assert rvar < 1e-24


def test_ols_intercept_only_gives_mean():
    y = np.array([1.0, 2.0, 4.0, 9.0])
    coef, _ = ols_fit(np.ones((4, 1)), y)
    assert coef[0] == pytest.approx(y.mean())


def test_ols_matches_normal_equations_oracle():
    X = np.array([[1, 0.5], [1, 1.1], [1, -0.3], [1, 2.2], [1, 0.9]])
    y = np.array([1.0, 2.0, 0.3, 4.1, 1.7])
    coef, _ = ols_fit(X, y)
    oracle = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(coef, oracle, atol=1e-12)


def test_ols_rank_deficiency_names_column():
    X = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(EstimationError) as err:
        ols_fit(X, np.arange(10.0))
    assert "column" in str(err.value)


# ------------------------------------------------------------ taxonomy


def tiny_taxonomy(**kw):
    base = dict(n=40, replicates=6, b_draws=8, pair_sample=60,
                stats=("degree_density", "link", "clustering", "giant_share",
                       "n_components", "max_eigenvalue"),
                target_mean_degree=6.0, seed=42, threads=1)
    base.update(kw)
    return TaxonomyConfig(**base)


def test_taxonomy_deterministic_output():
    r1 = scaled_mse_taxonomy(tiny_taxonomy())
    r2 = scaled_mse_taxonomy(tiny_taxonomy())
    assert r1.to_csv() == r2.to_csv()


def test_taxonomy_thread_count_invariance():
    r1 = scaled_mse_taxonomy(tiny_taxonomy(threads=1))
    r2 = scaled_mse_taxonomy(tiny_taxonomy(threads=2))
    assert r1.to_csv() == r2.to_csv()


def test_taxonomy_link_mse_matches_bernoulli_formula():
    # Corollary-style exactness: scaled link MSE ~ mean p(1-p) / mean(p)^2
    cfg = tiny_taxonomy(n=60, replicates=10, b_draws=60, pair_sample=300,
                        stats=("link",), target_mean_degree=8.0)
    res = scaled_mse_taxonomy(cfg)
    got = res.stats["link"].scaled_mse

    g = rng(cfg.seed)
    import ardnet.rng as rngmod
    from ardnet.rng import DOMAIN_REPLICATE, derive

    ps = []
    for rep in range(cfg.replicates):
        gen = derive(cfg.seed, DOMAIN_REPLICATE, rep)
        theta = sample_parameters(cfg.n, cfg.gen_config(), gen)
        ps.append(theta.probability_matrix()[np.triu_indices(cfg.n, k=1)])
    p = np.concatenate(ps)
    formula = p.mean() * (1 - p.mean())  # MSE of a Bernoulli around its mean
    expect = np.mean(p * (1 - p)) / p.mean() ** 2
    se = res.stats["link"].mc_se
    assert abs(got - expect) < 6 * se + 0.05 * expect


def test_taxonomy_link_dwarfs_degree_density():
    cfg = tiny_taxonomy(n=60, replicates=8, b_draws=12,
                        stats=("link", "degree_density", "clustering"),
                        target_mean_degree=8.0)
    res = scaled_mse_taxonomy(cfg)
    assert res.stats["link"].scaled_mse >= 5 * res.stats["degree_density"].scaled_mse


def test_taxonomy_trend_with_n():
    cfgs = {n: tiny_taxonomy(n=n, replicates=6, b_draws=10,
                             stats=("degree_density",), target_mean_degree=None,
                             target_density=0.08, seed=11) for n in (40, 120)}
    small = scaled_mse_taxonomy(cfgs[40]).stats["degree_density"].scaled_mse
    big = scaled_mse_taxonomy(cfgs[120]).stats["degree_density"].scaled_mse
    assert big < small


def test_taxonomy_csv_shape():
    res = scaled_mse_taxonomy(tiny_taxonomy())
    lines = res.to_csv().splitlines()
    assert lines[0] == "stat,level,n,replicates,B,scaled_mse,mc_se,flag_count"
    assert len(lines) == 1 + 6
    prov = res.provenance_text()
    assert "seed = 42" in prov


def test_taxonomy_fitted_source_smoke():
    from ardnet.estimate import FitConfig

    cfg = tiny_taxonomy(n=40, replicates=2, b_draws=6,
                        stats=("degree_density", "giant_share"),
                        target_mean_degree=8.0, traits_k=5,
                        fit=FitConfig(restarts=1, max_iter=150, q_draws=64),
                        source="fitted", seed=77)
    res = scaled_mse_taxonomy(cfg)
    assert np.isfinite(res.stats["degree_density"].scaled_mse)
    assert res.provenance["source"] == "fitted"


def test_taxonomy_config_validation():
    with pytest.raises(ConfigError):
        TaxonomyConfig(n=5)
    with pytest.raises(ConfigError):
        TaxonomyConfig(b_draws=1)
    with pytest.raises(ConfigError):
        TaxonomyConfig(source="other")


# ------------------------------------------------------------ many networks


def tiny_manynets(**kw):
    base = dict(r_networks=24, n=40, outer_reps=6, b_draws=8,
                stats=("degree_density", "link", "avg_path_length", "giant_share"),
                respondents=12, link_pairs=80, seed=9, threads=1,
                deg_mean_control=6.0, deg_mean_treated=10.0, deg_sd=2.0,
                deg_lo=3.0, deg_hi=14.0)
    base.update(kw)
    return ManyNetConfig(**base)


def test_manynets_deterministic_and_thread_invariant():
    r1 = many_networks_experiment(tiny_manynets())
    r2 = many_networks_experiment(tiny_manynets(threads=2))
    assert r1.to_csv() == r2.to_csv()


def test_manynets_csv_schema():
    res = many_networks_experiment(tiny_manynets())
    lines = res.to_csv().splitlines()
    assert lines[0] == "stat,R,repetition,beta_hat,gamma_hat,gamma_pct_err"
    assert len(lines) == 1 + 4 * 6
    # node/pair stats carry no gamma columns
    for ln in lines[1:]:
        parts = ln.split(",")
        if parts[0] in ("degree_density", "link"):
            assert parts[4] == "" and parts[5] == ""


def test_manynets_beta_recovers_for_smooth_statistic():
    res = many_networks_experiment(tiny_manynets(outer_reps=10, r_networks=40,
                                                 b_draws=16))
    med = res.stats["degree_density"]["beta_median"]
    assert 0.8 < med < 1.2


def test_manynets_orthogonality_of_expectation_error():
    # cov(S_bar, S_star - S_bar) should vanish across networks
    cfg = tiny_manynets(r_networks=150, outer_reps=1, b_draws=20,
                        stats=("avg_path_length",))
    from ardnet.harness import _manynet_network
    import ardnet.rng as rngmod

    gen = rngmod.derive(cfg.seed, rngmod.DOMAIN_REPLICATE, 0)
    n_treat = int(round(cfg.r_networks * cfg.treat_frac))
    mask = np.zeros(cfg.r_networks, dtype=bool)
    mask[gen.permutation(cfg.r_networks)[:n_treat]] = True
    svals, bvals = [], []
    for r in range(cfg.r_networks):
        out = _manynet_network((cfg, 0, r, bool(mask[r])))["avg_path_length"]
        if out[2][0]:
            svals.append(out[0][0])
            bvals.append(out[1][0])
    s = np.array(svals)
    b = np.array(bvals)
    diff = s - b
    cov = np.mean((b - b.mean()) * (diff - diff.mean()))
    se = np.std((b - b.mean()) * (diff - diff.mean()), ddof=1) / np.sqrt(b.size)
    assert abs(cov) < 4 * se + 1e-12


def test_manynets_config_validation():
    with pytest.raises(ConfigError):
        ManyNetConfig(treat_frac=0.0)
    with pytest.raises(ConfigError):
        ManyNetConfig(deg_mean_control=50.0)


def test_manynets_beta_iqr_shrinks_with_r():
    # needs genuine between-network variation in every statistic, so the
    # degree law spans the sparse regime where giant share moves
    stats = ("degree_density", "giant_share", "avg_path_length",
             "max_eigenvalue", "link")
    iqrs = {}
    for r_networks in (50, 200):
        cfg = tiny_manynets(r_networks=r_networks, n=60, outer_reps=30, b_draws=16,
                            stats=stats, respondents=15, link_pairs=60, seed=47,
                            threads=2, deg_mean_control=4.0, deg_mean_treated=9.0,
                            deg_lo=2.5, deg_hi=14.0)
        res = many_networks_experiment(cfg)
        iqrs[r_networks] = {name: res.stats[name]["beta_iqr"] for name in stats}
    for name in stats:
        assert iqrs[200][name] < iqrs[50][name], (name, iqrs)
