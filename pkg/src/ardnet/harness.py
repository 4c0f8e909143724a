"""Experiment harness: Monte Carlo statistic expectations, the single-graph
scaled-MSE study, the many-networks regression/treatment study, and OLS.

Both experiments follow the same pattern: draw generating parameters, draw
the "real" graph, compute statistics on it, and compare against the Monte
Carlo expectation of the same statistics under the generating parameters.
Replicates are embarrassingly parallel; every unit of work derives its own
random stream from the experiment seed and unit index, so results do not
depend on the worker count.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from . import textio
from .ard import TraitConfig, assign_traits, build_ard, sample_respondents
from .errors import ConfigError, EstimationError, InvalidInputError
from .estimate import FitConfig, fit_mle
from .gstats import (
    GraphAnalysis,
    betweenness_centrality,
    degree_density,
    diffusion_centrality,
    distance_based,
    eigenvector_centrality,
    fiedler_cut_share,
    graph_summary,
    link_indicator,
    local_clustering,
    support_share,
)
from .netgen import LOGISTIC, GenConfig, Graph, ModelParams, sample_graph, sample_parameters
from .parallel import parallel_map

NODE_STATS = [
    "degree_density",
    "eigenvector_centrality",
    "betweenness_centrality",
    "closeness",
    "proximity",
    "avg_path_length_node",
    "seed_distance",
    "clustering",
    "support_share",
    "diffusion_centrality",
]
PAIR_STATS = ["link"]
GRAPH_STATS = [
    "diameter",
    "avg_path_length",
    "avg_proximity",
    "giant_share",
    "n_components",
    "max_eigenvalue",
    "transitivity",
    "clustering_local_mean",
    "fiedler_cut_ratio",
    "fiedler_cut_share_total",
]
ALL_STATS = NODE_STATS + PAIR_STATS + GRAPH_STATS

DEFAULT_TAXONOMY_STATS = tuple(ALL_STATS)
DEFAULT_MANYNET_STATS = (
    "degree_density",
    "eigenvector_centrality",
    "clustering",
    "diffusion_centrality",
    "link",
    "diameter",
    "avg_path_length",
    "avg_proximity",
    "giant_share",
    "n_components",
    "max_eigenvalue",
    "transitivity",
    "fiedler_cut_ratio",
    "fiedler_cut_share_total",
)


def stat_level(name: str) -> str:
    if name in NODE_STATS:
        return "node"
    if name in PAIR_STATS:
        return "pair"
    if name in GRAPH_STATS:
        return "graph"
    raise ConfigError(f"unknown statistic {name!r}")


@dataclass(frozen=True)
class StatContext:
    """Per-replicate inputs holding which keys the statistics refer to."""

    seed_node: int | None = None
    pairs: np.ndarray | None = None      # (P, 2) sampled dyads for pair stats
    nodes: np.ndarray | None = None      # restrict node stats to these keys
    dc_q: float | None = None            # None: 1/lambda1 per draw
    dc_t: int = 3


def compute_stats(g: Graph, names, ctx: StatContext):
    """Values and validity masks for the requested statistics on one graph.

    Returns {name: (values, ok_mask)}; node statistics are restricted to
    ctx.nodes when given. Statistics that error on degenerate graphs are
    returned fully masked rather than raising.
    """
    ga = GraphAnalysis(g)
    out = {}
    names = list(names)
    sel = ctx.nodes if ctx.nodes is not None else np.arange(g.n)

    def node_result(table):
        ok = np.ones(g.n, dtype=bool)
        for key in table.flags:
            ok[key] = False
        return table.values[sel], ok[sel]

    dist_tables = None
    summary = None
    fiedler = None
    for name in names:
        if name == "degree_density":
            out[name] = node_result(degree_density(g, ga))
        elif name == "eigenvector_centrality":
            out[name] = node_result(eigenvector_centrality(g, ga))
        elif name == "betweenness_centrality":
            out[name] = node_result(betweenness_centrality(g, ga))
        elif name in ("closeness", "proximity", "avg_path_length_node", "seed_distance"):
            if dist_tables is None:
                dist_tables = distance_based(g, seed=ctx.seed_node, analysis=ga)
            if name == "seed_distance" and "seed_distance" not in dist_tables:
                raise ConfigError("seed_distance requested without a seed node")
            out[name] = node_result(dist_tables[name])
        elif name == "clustering":
            out[name] = node_result(local_clustering(g, ga))
        elif name == "support_share":
            out[name] = node_result(support_share(g, ga)[0])
        elif name == "diffusion_centrality":
            tab = diffusion_centrality(g, q=ctx.dc_q, T=ctx.dc_t, analysis=ga)
            out[name] = node_result(tab)
        elif name == "link":
            if ctx.pairs is None:
                raise ConfigError("link statistic requested without sampled pairs")
            tab = link_indicator(g, ctx.pairs)
            out[name] = (tab.values, np.ones(len(tab.keys), dtype=bool))
        elif name in GRAPH_STATS:
            if name.startswith("fiedler"):
                if fiedler is None:
                    try:
                        fiedler = fiedler_cut_share(g, ga)
                    except InvalidInputError:
                        fiedler = False
                if fiedler is False:
                    out[name] = (np.array([0.0]), np.array([False]))
                else:
                    ok = name not in fiedler.flags
                    out[name] = (np.array([fiedler.value(name)]), np.array([ok]))
            else:
                if summary is None:
                    summary = graph_summary(g, ga)
                ok = name not in summary.flags
                out[name] = (np.array([summary.value(name)]), np.array([ok]))
        else:
            raise ConfigError(f"unknown statistic {name!r}")
    return out


def expected_statistics(theta: ModelParams, names, b_draws: int,
                        rng: np.random.Generator, ctx: StatContext):
    """Monte Carlo (mean, standard error, used-draw count) per statistic key.

    Samples b_draws graphs from theta, computes every requested statistic on
    each, and averages per key over the draws where the key is defined.
    """
    if b_draws < 2:
        raise InvalidInputError("need at least 2 Monte Carlo draws")
    P = theta.probability_matrix()
    sums = {}
    sqs = {}
    cnts = {}
    for t in range(b_draws):
        g = _graph_from_p(P, rng)
        vals = compute_stats(g, names, ctx)
        for name, (v, ok) in vals.items():
            if name not in sums:
                sums[name] = np.zeros(v.shape[0])
                sqs[name] = np.zeros(v.shape[0])
                cnts[name] = np.zeros(v.shape[0], dtype=np.int64)
            vv = np.where(ok, v, 0.0)
            sums[name] += vv
            sqs[name] += vv * vv
            cnts[name] += ok
    out = {}
    for name in sums:
        c = cnts[name]
        mean = np.full(c.shape, np.nan)
        se = np.full(c.shape, np.nan)
        used = c > 0
        mean[used] = sums[name][used] / c[used]
        two = c > 1
        var = np.zeros(c.shape)
        var[two] = np.maximum(sqs[name][two] / c[two] - mean[two] ** 2, 0.0) * c[two] / (c[two] - 1)
        se[two] = np.sqrt(var[two] / c[two])
        out[name] = (mean, se, c)
    return out


def expected_statistic(theta: ModelParams, name: str, b_draws: int,
                       rng: np.random.Generator, ctx: StatContext | None = None):
    """Single-statistic convenience wrapper: (mean, se) arrays per key."""
    ctx = ctx or StatContext()
    mean, se, _ = expected_statistics(theta, [name], b_draws, rng, ctx)[name]
    return mean, se


def _graph_from_p(P: np.ndarray, rng) -> Graph:
    n = P.shape[0]
    iu = np.triu_indices(n, k=1)
    hit = rng.random(iu[0].size) < P[iu]
    return Graph(n, np.stack([iu[0][hit], iu[1][hit]], axis=1))


# ----------------------------------------------------------------- ordinary least squares


def ols_fit(X: np.ndarray, y: np.ndarray):
    """Least squares via QR; raises on rank deficiency naming the column."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise InvalidInputError("design matrix and response lengths differ")
    q, r, piv = _qr_pivot(X)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= 1e-10 * max(diag.max(), 1.0):
        bad = int(piv[int(np.argmin(diag))])
        raise EstimationError(f"design matrix is rank deficient at column {bad}")
    coef_p = np.linalg.solve(r, q.T @ y)
    coef = np.empty_like(coef_p)
    coef[piv] = coef_p
    resid = y - X @ coef
    dof = max(X.shape[0] - X.shape[1], 1)
    return coef, float(resid @ resid / dof)


def _qr_pivot(X):
    from scipy.linalg import qr

    q, r, piv = qr(X, mode="economic", pivoting=True)
    return q, r, piv


# ----------------------------------------------------------------- taxonomy experiment


@dataclass(frozen=True)
class TaxonomyConfig:
    """Single-large-graph scaled-MSE study."""

    n: int = 250
    replicates: int = 250
    b_draws: int = 100
    stats: tuple = DEFAULT_TAXONOMY_STATS
    source: str = "true"                  # true | fitted
    pair_sample: int = 500
    target_mean_degree: float | None = 8.0
    target_density: float | None = None   # overrides mean degree when set
    nu_mean: float = -2.0
    nu_sd: float = 0.5
    nu_lo: float = -3.0
    nu_hi: float = -1.0
    zeta: float = 1.0
    link_kind: str = LOGISTIC
    traits_k: int = 12
    traits_tau: float = 4.0
    dc_t: int = 3
    fit: FitConfig = field(default_factory=lambda: FitConfig(restarts=2, max_iter=1500))
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.n < 10:
            raise ConfigError("taxonomy needs n >= 10")
        if self.b_draws < 2:
            raise ConfigError("taxonomy needs B >= 2")
        if self.replicates < 2:
            raise ConfigError("taxonomy needs at least 2 replicates")
        if self.source not in ("true", "fitted"):
            raise ConfigError("source must be 'true' or 'fitted'")

    def mean_degree(self) -> float:
        if self.target_density is not None:
            return self.target_density * (self.n - 1)
        if self.target_mean_degree is None:
            raise ConfigError("need target_mean_degree or target_density")
        return self.target_mean_degree

    def gen_config(self) -> GenConfig:
        return GenConfig(nu_mean=self.nu_mean, nu_sd=self.nu_sd, nu_lo=self.nu_lo,
                         nu_hi=self.nu_hi, zeta=self.zeta, link_kind=self.link_kind,
                         target_mean_degree=self.mean_degree())


@dataclass
class StatResult:
    name: str
    level: str
    scaled_mse: float
    mc_se: float
    flag_count: int
    per_replicate: np.ndarray


@dataclass
class ExperimentResult:
    kind: str
    stats: dict
    provenance: dict
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.kind == "taxonomy":
            buf.write("stat,level,n,replicates,B,scaled_mse,mc_se,flag_count\n")
            prov = self.provenance
            for name, res in self.stats.items():
                buf.write(
                    f"{name},{res.level},{prov['n']},{prov['replicates']},{prov['b_draws']},"
                    f"{res.scaled_mse:.17g},{res.mc_se:.17g},{res.flag_count}\n"
                )
        else:
            buf.write("stat,R,repetition,beta_hat,gamma_hat,gamma_pct_err\n")
            for row in self.rows:
                name, R, rep, beta, gamma, pct = row
                gtxt = "" if gamma is None else f"{gamma:.17g}"
                ptxt = "" if pct is None else f"{pct:.17g}"
                btxt = "" if beta is None else f"{beta:.17g}"
                buf.write(f"{name},{R},{rep},{btxt},{gtxt},{ptxt}\n")
        return buf.getvalue()

    def provenance_text(self) -> str:
        pairs = dict(self.provenance)
        pairs["config_hash"] = textio.config_hash(self.provenance)
        return textio.dump_kv(pairs)


def _taxonomy_replicate(args):
    cfg, rep = args
    gen = rngmod.derive(cfg.seed, rngmod.DOMAIN_REPLICATE, rep)
    theta = sample_parameters(cfg.n, cfg.gen_config(), gen)
    gstar = sample_graph(theta, gen)
    seed_node = int(gen.integers(cfg.n))
    iu = np.triu_indices(cfg.n, k=1)
    take = gen.choice(iu[0].size, size=min(cfg.pair_sample, iu[0].size), replace=False)
    pairs = np.stack([iu[0][take], iu[1][take]], axis=1)
    ctx = StatContext(seed_node=seed_node, pairs=pairs, dc_t=cfg.dc_t)

    source_theta = theta
    if cfg.source == "fitted":
        traits = assign_traits(theta.z, cfg.traits_k,
                               TraitConfig(concentration=cfg.traits_tau), gen)
        Y = build_ard(gstar, traits, np.arange(cfg.n))
        fit = fit_mle(Y, traits.sizes, cfg.fit, gen)
        source_theta = model_params_from_fit(fit.model)

    star = compute_stats(gstar, cfg.stats, ctx)
    exp = expected_statistics(source_theta, cfg.stats, cfg.b_draws, gen, ctx)
    out = {}
    for name in cfg.stats:
        sv, sok = star[name]
        mean, _, cnt = exp[name]
        ok = sok & (cnt > 0) & np.isfinite(mean)
        err2 = float(np.sum((mean[ok] - sv[ok]) ** 2))
        out[name] = (err2, int(ok.sum()), float(np.sum(sv[ok])), int(ok.size - ok.sum()))
    return out


def model_params_from_fit(model) -> ModelParams:
    """Formation-model parameters implied by a fitted ARD model."""
    return ModelParams(nu=model.nu - model.nu.mean(),
                       z=model.z,
                       zeta=model.zeta,
                       offset=model.offset + model.nu_bar + 2 * model.nu.mean(),
                       surface=model.surface,
                       link_kind=model.link_kind)


def scaled_mse_taxonomy(config: TaxonomyConfig) -> ExperimentResult:
    """Scaled MSE of every requested statistic across replicates."""
    work = [(config, rep) for rep in range(config.replicates)]
    results = parallel_map(_taxonomy_replicate, work, config.threads)

    stats = {}
    for name in config.stats:
        err2 = np.array([r[name][0] for r in results])
        used = np.array([r[name][1] for r in results])
        ssum = np.array([r[name][2] for r in results])
        flags = np.array([r[name][3] for r in results])
        total_used = int(used.sum())
        if total_used == 0:
            stats[name] = StatResult(name, stat_level(name), float("nan"), float("nan"),
                                     int(flags.sum()), np.full(config.replicates, np.nan))
            continue
        mean_s = float(ssum.sum() / total_used)
        denom = mean_s**2 if mean_s != 0.0 else 1.0
        scaled = float(err2.sum() / total_used / denom)
        per_rep = np.full(config.replicates, np.nan)
        has = used > 0
        per_rep[has] = err2[has] / used[has] / denom
        reps = per_rep[np.isfinite(per_rep)]
        mc_se = float(reps.std(ddof=1) / np.sqrt(reps.size)) if reps.size > 1 else float("nan")
        stats[name] = StatResult(name, stat_level(name), scaled, mc_se, int(flags.sum()),
                                 per_rep)

    from . import __version__

    prov = {
        "experiment": "taxonomy",
        "code_version": __version__,
        "n": config.n,
        "replicates": config.replicates,
        "b_draws": config.b_draws,
        "source": config.source,
        "pair_sample": config.pair_sample,
        "mean_degree": config.mean_degree(),
        "nu_mean": config.nu_mean,
        "nu_sd": config.nu_sd,
        "nu_lo": config.nu_lo,
        "nu_hi": config.nu_hi,
        "zeta": config.zeta,
        "link_kind": config.link_kind,
        "surface": "sphere_2_k1",
        "traits_k": config.traits_k,
        "traits_tau": config.traits_tau,
        "dc_t": config.dc_t,
        "seed": config.seed,
        "stats": ",".join(config.stats),
    }
    return ExperimentResult(kind="taxonomy", stats=stats, provenance=prov)


# ----------------------------------------------------------------- many networks


@dataclass(frozen=True)
class ManyNetConfig:
    """Many-independent-networks regression and treatment study."""

    r_networks: int = 200
    n: int = 250
    outer_reps: int = 100
    b_draws: int = 25
    stats: tuple = DEFAULT_MANYNET_STATS
    treat_frac: float = 0.5
    deg_mean_control: float = 15.0
    deg_mean_treated: float = 25.0
    deg_sd: float = 5.0
    deg_lo: float = 5.0
    deg_hi: float = 35.0
    respondents: int = 50
    link_pairs: int = 1000
    beta: float = 1.0
    intercept: float = 0.5
    nu_mean: float = -2.0
    nu_sd: float = 0.5
    nu_lo: float = -3.0
    nu_hi: float = -1.0
    zeta: float = 1.0
    link_kind: str = LOGISTIC
    dc_t: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.r_networks < 2:
            raise ConfigError("need at least 2 networks")
        if not 0.0 < self.treat_frac < 1.0:
            raise ConfigError("treatment fraction must be inside (0, 1)")
        if not self.deg_lo <= self.deg_mean_control <= self.deg_hi:
            raise ConfigError("control degree mean outside truncation bounds")
        if not self.deg_lo <= self.deg_mean_treated <= self.deg_hi:
            raise ConfigError("treated degree mean outside truncation bounds")
        if self.b_draws < 2:
            raise ConfigError("need B >= 2 expectation draws")


def _truncated_degree(mean, sd, lo, hi, gen):
    for _ in range(10_000):
        x = gen.normal(mean, sd)
        if lo <= x <= hi:
            return float(x)
    raise EstimationError("degree truncation rejection failed")


def _manynet_network(args):
    """One network inside one repetition: statistics for the realized graph
    and their Monte Carlo expectations."""
    cfg, rep, r, treated = args
    gen = rngmod.derive(cfg.seed, rngmod.DOMAIN_NETWORK, rep, r)
    mean = cfg.deg_mean_treated if treated else cfg.deg_mean_control
    target = _truncated_degree(mean, cfg.deg_sd, cfg.deg_lo, cfg.deg_hi, gen)
    gcfg = GenConfig(nu_mean=cfg.nu_mean, nu_sd=cfg.nu_sd, nu_lo=cfg.nu_lo,
                     nu_hi=cfg.nu_hi, zeta=cfg.zeta, link_kind=cfg.link_kind,
                     target_mean_degree=target)
    theta = sample_parameters(cfg.n, gcfg, gen)
    gstar = sample_graph(theta, gen)
    resp = sample_respondents(cfg.n, min(cfg.respondents, cfg.n), gen)
    iu = np.triu_indices(cfg.n, k=1)
    take = gen.choice(iu[0].size, size=min(cfg.link_pairs, iu[0].size), replace=False)
    pairs = np.stack([iu[0][take], iu[1][take]], axis=1)
    ctx = StatContext(seed_node=None, pairs=pairs, nodes=resp, dc_t=cfg.dc_t)

    star = compute_stats(gstar, cfg.stats, ctx)
    exp = expected_statistics(theta, cfg.stats, cfg.b_draws, gen, ctx)
    out = {}
    for name in cfg.stats:
        sv, sok = star[name]
        mean_v, _, cnt = exp[name]
        ok = sok & (cnt > 0) & np.isfinite(mean_v)
        out[name] = (sv, mean_v, ok)
    return out


def many_networks_experiment(config: ManyNetConfig) -> ExperimentResult:
    """beta-hat / gamma-hat distributions across outer repetitions."""
    cfg = config
    jobs = []
    treatments = []
    for rep in range(cfg.outer_reps):
        gen = rngmod.derive(cfg.seed, rngmod.DOMAIN_REPLICATE, rep)
        n_treat = int(round(cfg.r_networks * cfg.treat_frac))
        mask = np.zeros(cfg.r_networks, dtype=bool)
        mask[gen.permutation(cfg.r_networks)[:n_treat]] = True
        treatments.append(mask)
        for r in range(cfg.r_networks):
            jobs.append((cfg, rep, r, bool(mask[r])))
    results = parallel_map(_manynet_network, jobs, cfg.threads)

    rows = []
    beta_by_stat = {name: [] for name in cfg.stats}
    gamma_rows = {name: [] for name in cfg.stats}
    idx = 0
    for rep in range(cfg.outer_reps):
        nets = results[idx : idx + cfg.r_networks]
        idx += cfg.r_networks
        tmask = treatments[rep].astype(float)
        for si, name in enumerate(cfg.stats):
            level = stat_level(name)
            svals = [nets[r][name][0] for r in range(cfg.r_networks)]
            bvals = [nets[r][name][1] for r in range(cfg.r_networks)]
            oks = [nets[r][name][2] for r in range(cfg.r_networks)]
            noise_gen = rngmod.derive(cfg.seed, rngmod.DOMAIN_NOISE, rep, si)
            beta_hat = gamma_hat = pct = None
            if level in ("node", "pair"):
                s_star = np.concatenate(svals)
                s_bar = np.concatenate(bvals)
                ok = np.concatenate(oks)
                s_star, s_bar = s_star[ok], s_bar[ok]
                if s_star.size > 2 and s_star.std() > 0 and s_bar.std() > 0:
                    eps = noise_gen.normal(0.0, s_star.std(ddof=1), size=s_star.size)
                    o = cfg.intercept + cfg.beta * s_star + eps
                    X = np.stack([np.ones(s_bar.size), s_bar], axis=1)
                    beta_hat = float(ols_fit(X, o)[0][1])
            else:
                s_star = np.array([sv[0] for sv in svals])
                s_bar = np.array([bv[0] for bv in bvals])
                ok = np.array([bool(o[0]) for o in oks])
                s_star, s_bar, tm = s_star[ok], s_bar[ok], tmask[ok]
                if s_star.size > 3 and s_bar.std() > 0:
                    eps = noise_gen.normal(0.0, max(s_star.std(ddof=1), 1e-12),
                                           size=s_star.size)
                    o = cfg.intercept + cfg.beta * s_star + eps
                    X = np.stack([np.ones(s_bar.size), s_bar], axis=1)
                    beta_hat = float(ols_fit(X, o)[0][1])
                    if tm.std() > 0:
                        Xt = np.stack([np.ones(tm.size), tm], axis=1)
                        gamma_hat = float(ols_fit(Xt, s_bar)[0][1])
                        gamma_star = float(ols_fit(Xt, s_star)[0][1])
                        if gamma_star != 0.0:
                            pct = (gamma_hat - gamma_star) / gamma_star
            rows.append((name, cfg.r_networks, rep, beta_hat, gamma_hat, pct))
            if beta_hat is not None:
                beta_by_stat[name].append(beta_hat)
            if pct is not None:
                gamma_rows[name].append(pct)

    stats = {}
    for name in cfg.stats:
        betas = np.array(beta_by_stat[name])
        med = float(np.median(betas)) if betas.size else float("nan")
        stats[name] = {
            "level": stat_level(name),
            "beta_median": med,
            "beta_iqr": float(np.subtract(*np.percentile(betas, [75, 25]))) if betas.size else float("nan"),
            "gamma_pct_median": float(np.median(gamma_rows[name])) if gamma_rows[name] else None,
            "gamma_pct_iqr": (float(np.subtract(*np.percentile(gamma_rows[name], [75, 25])))
                              if gamma_rows[name] else None),
        }

    from . import __version__

    prov = {
        "experiment": "manynets",
        "code_version": __version__,
        "r_networks": cfg.r_networks,
        "n": cfg.n,
        "outer_reps": cfg.outer_reps,
        "b_draws": cfg.b_draws,
        "treat_frac": cfg.treat_frac,
        "deg_mean_control": cfg.deg_mean_control,
        "deg_mean_treated": cfg.deg_mean_treated,
        "deg_sd": cfg.deg_sd,
        "deg_lo": cfg.deg_lo,
        "deg_hi": cfg.deg_hi,
        "respondents": cfg.respondents,
        "link_pairs": cfg.link_pairs,
        "beta": cfg.beta,
        "intercept": cfg.intercept,
        "nu_mean": cfg.nu_mean,
        "nu_sd": cfg.nu_sd,
        "zeta": cfg.zeta,
        "link_kind": cfg.link_kind,
        "surface": "sphere_2_k1",
        "seed": cfg.seed,
        "stats": ",".join(cfg.stats),
    }
    return ExperimentResult(kind="manynets", stats=stats, provenance=prov, rows=rows)
