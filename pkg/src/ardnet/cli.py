"""Command-line front end.

One structured key-value config file (plus repeatable --set overrides)
drives every subcommand. Each run writes its fully resolved config beside
its outputs so any result can be reproduced byte-for-byte by re-feeding the
sidecar. All randomness derives from the single global seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import rng as rngmod
from . import textio
from .ard import ARDMatrix, TraitAssignment, TraitConfig, assign_traits, build_ard, \
    sample_respondents
from .errors import (
    ArdnetError,
    CalibrationError,
    ConfigError,
    EstimationError,
    InvalidInputError,
    NumericalDomainError,
    ParameterizationError,
    UnsupportedOperationError,
)
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
    write_stat_csv,
)
from .harness import (
    ALL_STATS,
    DEFAULT_MANYNET_STATS,
    DEFAULT_TAXONOMY_STATS,
    ManyNetConfig,
    TaxonomyConfig,
    many_networks_experiment,
    scaled_mse_taxonomy,
)
from .netgen import Graph, GenConfig, sample_graph, sample_parameters

GLOBAL_SCHEMA = {
    "seed": ("int", 0),
    "out": ("str", "out"),
    "threads": ("int", 1),
}

SCHEMAS = {
    "simulate": {
        "simulate.n": ("int", 250),
        "simulate.mean_degree": ("float", 8.0),
        "simulate.density": ("optfloat", None),
        "simulate.link": ("str", "logistic"),
        "simulate.nu_mean": ("float", -2.0),
        "simulate.nu_sd": ("float", 0.5),
        "simulate.nu_lo": ("float", -3.0),
        "simulate.nu_hi": ("float", -1.0),
        "simulate.zeta": ("float", 1.0),
        "simulate.traits_k": ("int", 12),
        "simulate.traits_tau": ("float", 4.0),
        "simulate.traits_mode": ("str", "partition"),
        "simulate.traits_placement": ("str", "clustered"),
        "simulate.respondents": ("int", 0),
    },
    "fit": {
        "fit.ard": ("str", ""),
        "fit.traits": ("str", ""),
        "fit.q": ("int", 256),
        "fit.restarts": ("int", 5),
        "fit.max_iter": ("int", 5000),
        "fit.grad_tol": ("float", 1e-6),
        "fit.link": ("str", "logistic"),
        "fit.nu_bar": ("float", 0.0),
        "fit.tau_init": ("float", 4.0),
        "fit.estimate_tau": ("bool", True),
    },
    "stats": {
        "stats.graph": ("str", ""),
        "stats.seed_node": ("int", -1),
        "stats.link_pairs": ("int", 0),
        "stats.dc_t": ("int", 3),
    },
    "taxonomy": {
        "taxonomy.n": ("int", 250),
        "taxonomy.replicates": ("int", 250),
        "taxonomy.b": ("int", 100),
        "taxonomy.source": ("str", "true"),
        "taxonomy.pair_sample": ("int", 500),
        "taxonomy.mean_degree": ("float", 8.0),
        "taxonomy.density": ("optfloat", None),
        "taxonomy.stats": ("str", ",".join(DEFAULT_TAXONOMY_STATS)),
        "taxonomy.nu_mean": ("float", -2.0),
        "taxonomy.nu_sd": ("float", 0.5),
        "taxonomy.nu_lo": ("float", -3.0),
        "taxonomy.nu_hi": ("float", -1.0),
        "taxonomy.zeta": ("float", 1.0),
        "taxonomy.link": ("str", "logistic"),
        "taxonomy.traits_k": ("int", 12),
        "taxonomy.traits_tau": ("float", 4.0),
        "taxonomy.dc_t": ("int", 3),
        "taxonomy.fit_q": ("int", 256),
        "taxonomy.fit_restarts": ("int", 2),
        "taxonomy.fit_max_iter": ("int", 1500),
    },
    "manynets": {
        "manynets.r": ("int", 200),
        "manynets.n": ("int", 250),
        "manynets.reps": ("int", 100),
        "manynets.b": ("int", 25),
        "manynets.stats": ("str", ",".join(DEFAULT_MANYNET_STATS)),
        "manynets.treat_frac": ("float", 0.5),
        "manynets.deg_mean_control": ("float", 15.0),
        "manynets.deg_mean_treated": ("float", 25.0),
        "manynets.deg_sd": ("float", 5.0),
        "manynets.deg_lo": ("float", 5.0),
        "manynets.deg_hi": ("float", 35.0),
        "manynets.respondents": ("int", 50),
        "manynets.link_pairs": ("int", 1000),
        "manynets.beta": ("float", 1.0),
        "manynets.nu_mean": ("float", -2.0),
        "manynets.nu_sd": ("float", 0.5),
        "manynets.nu_lo": ("float", -3.0),
        "manynets.nu_hi": ("float", -1.0),
        "manynets.zeta": ("float", 1.0),
        "manynets.link": ("str", "logistic"),
        "manynets.dc_t": ("int", 3),
    },
    "check": {
        "check.exhaustive_max": ("int", 4),
        "check.samples": ("int", 300),
    },
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4


def _parse_value(kind: str, raw: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optfloat":
            return None if raw.strip() in ("", "none") else float(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r} as {kind}") from exc


def resolve_config(command: str, config_path: str | None, sets: list[str],
                   seed: int | None, out: str | None, threads: int | None) -> dict:
    schema = dict(GLOBAL_SCHEMA)
    schema.update(SCHEMAS[command])
    raw: dict[str, str] = {}
    if config_path:
        try:
            raw.update(textio.load_kv(config_path))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        raw[key.strip()] = val.strip()
    recorded = raw.pop("command", None)
    if recorded is not None and recorded != command:
        raise ConfigError(f"config file was written by the {recorded!r} subcommand")
    unknown = [k for k in raw if k not in schema]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = {}
    for key, (kind, default) in schema.items():
        cfg[key] = _parse_value(kind, raw[key]) if key in raw else default
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    if threads is not None:
        cfg["threads"] = threads
    return cfg


def _write_resolved(cfg: dict, outdir: Path, command: str):
    pairs = {"command": command}
    pairs.update({k: ("" if v is None else v) for k, v in sorted(cfg.items())})
    textio.dump_kv(pairs, outdir / "config.resolved")


def _cmd_simulate(cfg: dict, outdir: Path) -> None:
    seed = cfg["seed"]
    n = cfg["simulate.n"]
    density = cfg["simulate.density"]
    target = density * (n - 1) if density is not None else cfg["simulate.mean_degree"]
    gen_cfg = GenConfig(
        nu_mean=cfg["simulate.nu_mean"], nu_sd=cfg["simulate.nu_sd"],
        nu_lo=cfg["simulate.nu_lo"], nu_hi=cfg["simulate.nu_hi"],
        zeta=cfg["simulate.zeta"], link_kind=cfg["simulate.link"],
        target_mean_degree=target,
    )
    theta = sample_parameters(n, gen_cfg, rngmod.derive(seed, rngmod.DOMAIN_PARAMS))
    g = sample_graph(theta, rngmod.derive(seed, rngmod.DOMAIN_GRAPH))
    traits = assign_traits(
        theta.z, cfg["simulate.traits_k"],
        TraitConfig(mode=cfg["simulate.traits_mode"],
                    placement=cfg["simulate.traits_placement"],
                    concentration=cfg["simulate.traits_tau"]),
        rngmod.derive(seed, rngmod.DOMAIN_TRAITS),
    )
    m = cfg["simulate.respondents"] or n
    resp = sample_respondents(n, m, rngmod.derive(seed, rngmod.DOMAIN_RESPONDENTS))
    ard = build_ard(g, traits, resp)

    params = {
        "format": "ardnet-params-1",
        "n": n,
        "zeta": theta.zeta,
        "offset": theta.offset,
        "link_kind": theta.link_kind,
        "surface": "sphere_2_k1",
        "nu": theta.nu,
        "z": theta.z.ravel(),
    }
    textio.dump_kv(params, outdir / "params.txt")
    (outdir / "graph.edges").write_text(g.to_text())
    (outdir / "traits.csv").write_text(traits.to_csv())
    (outdir / "ard.csv").write_text(ard.to_csv())
    print(f"simulate: n={n} edges={g.edge_count} K={traits.K} m={m} -> {outdir}")


def _cmd_fit(cfg: dict, outdir: Path) -> None:
    if not cfg["fit.ard"] or not cfg["fit.traits"]:
        raise ConfigError("fit requires fit.ard and fit.traits paths")
    ard = ARDMatrix.from_csv(Path(cfg["fit.ard"]).read_text())
    traits = TraitAssignment.from_csv(Path(cfg["fit.traits"]).read_text())
    if traits.K != ard.K:
        raise ConfigError("trait file and ARD matrix disagree on K")
    fit_cfg = FitConfig(
        link_kind=cfg["fit.link"], q_draws=cfg["fit.q"], restarts=cfg["fit.restarts"],
        max_iter=cfg["fit.max_iter"], grad_tol=cfg["fit.grad_tol"],
        nu_bar=cfg["fit.nu_bar"], tau_init=cfg["fit.tau_init"],
        estimate_tau=cfg["fit.estimate_tau"], threads=cfg["threads"],
    )
    report = fit_mle(ard, traits.sizes.astype(float), fit_cfg,
                     rngmod.derive(cfg["seed"], rngmod.DOMAIN_FIT))
    report.config_hash = textio.config_hash(cfg)
    (outdir / "fitreport.txt").write_text(report.to_text())
    print(f"fit: m={ard.m} K={ard.K} converged={report.converged} "
          f"loglik={report.loglik:.10g} -> {outdir}")


def _cmd_stats(cfg: dict, outdir: Path) -> None:
    if not cfg["stats.graph"]:
        raise ConfigError("stats requires stats.graph path")
    g = Graph.from_text(Path(cfg["stats.graph"]).read_text())
    ga = GraphAnalysis(g)
    seed_node = cfg["stats.seed_node"]
    if seed_node < 0:
        seed_node = int(rngmod.derive(cfg["seed"], rngmod.DOMAIN_SEED_NODE).integers(g.n))
    tables = [
        degree_density(g, ga),
        eigenvector_centrality(g, ga),
        betweenness_centrality(g, ga),
        local_clustering(g, ga),
    ]
    tabs = distance_based(g, seed=seed_node, analysis=ga)
    tables.extend(tabs.values())
    node_sup, pair_sup = support_share(g, ga)
    tables.extend([node_sup, pair_sup])
    tables.append(diffusion_centrality(g, T=cfg["stats.dc_t"], analysis=ga))
    if cfg["stats.link_pairs"] > 0:
        gen = rngmod.derive(cfg["seed"], rngmod.DOMAIN_PAIRS)
        iu = np.triu_indices(g.n, k=1)
        take = gen.choice(iu[0].size, size=min(cfg["stats.link_pairs"], iu[0].size),
                          replace=False)
        tables.append(link_indicator(g, np.stack([iu[0][take], iu[1][take]], axis=1)))
    tables.append(graph_summary(g, ga))
    try:
        tables.append(fiedler_cut_share(g, ga))
    except InvalidInputError:
        pass
    (outdir / "stats.csv").write_text(write_stat_csv(tables))
    print(f"stats: n={g.n} edges={g.edge_count} -> {outdir / 'stats.csv'}")


def _cmd_taxonomy(cfg: dict, outdir: Path) -> None:
    stats = tuple(s.strip() for s in cfg["taxonomy.stats"].split(",") if s.strip())
    for s in stats:
        if s not in ALL_STATS:
            raise ConfigError(f"unknown statistic {s!r}")
    tax = TaxonomyConfig(
        n=cfg["taxonomy.n"], replicates=cfg["taxonomy.replicates"],
        b_draws=cfg["taxonomy.b"], stats=stats, source=cfg["taxonomy.source"],
        pair_sample=cfg["taxonomy.pair_sample"],
        target_mean_degree=cfg["taxonomy.mean_degree"],
        target_density=cfg["taxonomy.density"],
        nu_mean=cfg["taxonomy.nu_mean"], nu_sd=cfg["taxonomy.nu_sd"],
        nu_lo=cfg["taxonomy.nu_lo"], nu_hi=cfg["taxonomy.nu_hi"],
        zeta=cfg["taxonomy.zeta"], link_kind=cfg["taxonomy.link"],
        traits_k=cfg["taxonomy.traits_k"], traits_tau=cfg["taxonomy.traits_tau"],
        dc_t=cfg["taxonomy.dc_t"],
        fit=FitConfig(q_draws=cfg["taxonomy.fit_q"], restarts=cfg["taxonomy.fit_restarts"],
                      max_iter=cfg["taxonomy.fit_max_iter"]),
        seed=cfg["seed"], threads=cfg["threads"],
    )
    result = scaled_mse_taxonomy(tax)
    (outdir / "taxonomy.csv").write_text(result.to_csv())
    (outdir / "taxonomy.provenance.txt").write_text(result.provenance_text())
    print(f"taxonomy: wrote {outdir / 'taxonomy.csv'}")


def _cmd_manynets(cfg: dict, outdir: Path) -> None:
    stats = tuple(s.strip() for s in cfg["manynets.stats"].split(",") if s.strip())
    for s in stats:
        if s not in ALL_STATS:
            raise ConfigError(f"unknown statistic {s!r}")
    mn = ManyNetConfig(
        r_networks=cfg["manynets.r"], n=cfg["manynets.n"], outer_reps=cfg["manynets.reps"],
        b_draws=cfg["manynets.b"], stats=stats, treat_frac=cfg["manynets.treat_frac"],
        deg_mean_control=cfg["manynets.deg_mean_control"],
        deg_mean_treated=cfg["manynets.deg_mean_treated"],
        deg_sd=cfg["manynets.deg_sd"], deg_lo=cfg["manynets.deg_lo"],
        deg_hi=cfg["manynets.deg_hi"], respondents=cfg["manynets.respondents"],
        link_pairs=cfg["manynets.link_pairs"], beta=cfg["manynets.beta"],
        nu_mean=cfg["manynets.nu_mean"], nu_sd=cfg["manynets.nu_sd"],
        nu_lo=cfg["manynets.nu_lo"], nu_hi=cfg["manynets.nu_hi"],
        zeta=cfg["manynets.zeta"], link_kind=cfg["manynets.link"],
        dc_t=cfg["manynets.dc_t"], seed=cfg["seed"], threads=cfg["threads"],
    )
    result = many_networks_experiment(mn)
    (outdir / "manynets.csv").write_text(result.to_csv())
    (outdir / "manynets.provenance.txt").write_text(result.provenance_text())
    print(f"manynets: wrote {outdir / 'manynets.csv'}")


def _cmd_check(cfg: dict, outdir: Path) -> None:
    from .bruteforce import run_suite

    checked, failures = run_suite(seed=cfg["seed"],
                                  exhaustive_max=cfg["check.exhaustive_max"],
                                  samples_per_n=cfg["check.samples"])
    lines = [f"checked {checked} graphs", f"failures {len(failures)}"]
    lines.extend(failures)
    (outdir / "check.txt").write_text("\n".join(lines) + "\n")
    for line in lines[:20]:
        print(f"check: {line}")
    if failures:
        raise EstimationError(f"{len(failures)} brute-force mismatches; see check.txt")


COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "stats": _cmd_stats,
    "taxonomy": _cmd_taxonomy,
    "manynets": _cmd_manynets,
    "check": _cmd_check,
}


def main(argv=None) -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    parser = argparse.ArgumentParser(prog="ardnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--set", action="append", default=[], dest="sets",
                       metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.sets, args.seed,
                             args.out, args.threads)
        outdir = Path(cfg["out"])
        try:
            outdir.mkdir(parents=True, exist_ok=True)
            _write_resolved(cfg, outdir, args.command)
            COMMANDS[args.command](cfg, outdir)
        except OSError as exc:
            raise _IOFailure(str(exc)) from exc
        return EXIT_OK
    except (ConfigError, InvalidInputError, UnsupportedOperationError) as exc:
        print(f"error class=config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _IOFailure as exc:
        print(f"error class=io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (EstimationError, ParameterizationError, CalibrationError,
            NumericalDomainError, ArdnetError) as exc:
        print(f"error class=estimation: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


class _IOFailure(Exception):
    pass


if __name__ == "__main__":
    sys.exit(main())
