"""Render experiment CSVs into publication-style figures.

Three figure kinds are supported:

* ``mse_panel``: per-statistic scaled MSE from a taxonomy CSV, one panel for
  node/pair statistics and one for graph statistics, log-scale points.
* ``beta_boxplot``: distribution of slope estimates per statistic from a
  many-networks CSV, one panel per network count R, reference line at 1.
* ``gamma_boxplot``: treatment-slope percent error per graph statistic,
  one panel per R, reference line at 0.

Boxplots draw median and quartiles with outliers removed (1.5 IQR rule).
Rendering is deterministic and read-only over its inputs.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("mse_panel", "beta_boxplot", "gamma_boxplot")

TAXONOMY_COLUMNS = ["stat", "level", "n", "replicates", "B", "scaled_mse",
                    "mc_se", "flag_count"]
MANYNETS_COLUMNS = ["stat", "R", "repetition", "beta_hat", "gamma_hat",
                    "gamma_pct_err"]


class SchemaError(ValueError):
    """Input CSV does not match the documented schema."""


@dataclass(frozen=True)
class FigureSpec:
    csv_paths: tuple
    kind: str
    out_path: str
    stat_order: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}")
        if not self.csv_paths:
            raise SchemaError("need at least one input CSV")


@dataclass
class RenderReport:
    """What was drawn; used by smoke tests and callers."""

    out_path: str
    kind: str
    box_count: int = 0
    mark_count: int = 0
    panel_count: int = 0
    reference_lines: list = field(default_factory=list)


def _read_csv(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _order(stats, requested):
    if requested:
        missing = [s for s in requested if s not in stats]
        if missing:
            raise SchemaError(f"requested statistics not in CSV: {missing}")
        return [s for s in requested if s in stats]
    return sorted(stats)


def _render_mse_panel(spec: FigureSpec) -> RenderReport:
    rows = []
    for path in spec.csv_paths:
        rows.extend(_read_csv(path, TAXONOMY_COLUMNS))
    node_rows = [r for r in rows if r["level"] in ("node", "pair")]
    graph_rows = [r for r in rows if r["level"] == "graph"]
    panels = [p for p in ((node_rows, "node level"), (graph_rows, "graph level")) if p[0]]
    if not panels:
        raise SchemaError("taxonomy CSV has no usable rows")
    fig, axes = plt.subplots(1, len(panels), figsize=(6.0 * len(panels), 4.2))
    if len(panels) == 1:
        axes = [axes]
    report = RenderReport(out_path=spec.out_path, kind=spec.kind,
                          panel_count=len(panels))
    for ax, (panel_rows, title) in zip(axes, panels):
        stats = _order({r["stat"] for r in panel_rows}, spec.stat_order)
        vals, errs = [], []
        for s in stats:
            rr = [r for r in panel_rows if r["stat"] == s]
            vals.append(float(rr[0]["scaled_mse"]))
            err = rr[0]["mc_se"]
            errs.append(float(err) if err not in ("", "nan") else 0.0)
        x = np.arange(len(stats))
        ax.errorbar(x, vals, yerr=errs, fmt="o", color="black", capsize=3)
        ax.set_yscale("log")
        ax.set_xticks(x)
        ax.set_xticklabels(stats, rotation=60, ha="right", fontsize=8)
        ax.set_ylabel("scaled MSE")
        ax.set_title(title)
        report.mark_count += len(stats)
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return report


def _render_boxplot(spec: FigureSpec, column: str, refline: float) -> RenderReport:
    rows = []
    for path in spec.csv_paths:
        rows.extend(_read_csv(path, MANYNETS_COLUMNS))
    rows = [r for r in rows if r[column] not in ("", "nan")]
    if not rows:
        raise SchemaError(f"no rows carry a {column!r} value")
    r_values = sorted({int(r["R"]) for r in rows})
    stats = _order({r["stat"] for r in rows}, spec.stat_order)
    fig, axes = plt.subplots(1, len(r_values), figsize=(5.5 * len(r_values), 4.2),
                             sharey=True)
    if len(r_values) == 1:
        axes = [axes]
    report = RenderReport(out_path=spec.out_path, kind=spec.kind,
                          panel_count=len(r_values))
    for ax, R in zip(axes, r_values):
        data = []
        for s in stats:
            vals = [float(r[column]) for r in rows
                    if r["stat"] == s and int(r["R"]) == R]
            data.append(vals)
        keep = [i for i, d in enumerate(data) if d]
        ax.boxplot([data[i] for i in keep], orientation="horizontal",
                   showfliers=False, whis=1.5,
                   tick_labels=[stats[i] for i in keep])
        ax.axvline(refline, color="red", linewidth=1.2)
        ax.set_title(f"R = {R}")
        ax.tick_params(axis="y", labelsize=8)
        report.box_count += len(keep)
        report.reference_lines.append(refline)
    axes[0].set_ylabel("statistic")
    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return report


def render(spec: FigureSpec) -> RenderReport:
    """Render one figure; raises SchemaError without writing on bad input."""
    if spec.kind == "mse_panel":
        return _render_mse_panel(spec)
    if spec.kind == "beta_boxplot":
        return _render_boxplot(spec, "beta_hat", 1.0)
    return _render_boxplot(spec, "gamma_pct_err", 0.0)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ardplots", description=__doc__)
    parser.add_argument("--csv", action="append", required=True,
                        help="input CSV (repeatable)")
    parser.add_argument("--kind", choices=KINDS, required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--stats", default="",
                        help="comma-separated statistic ordering")
    args = parser.parse_args(argv)
    order = tuple(s.strip() for s in args.stats.split(",") if s.strip())
    try:
        spec = FigureSpec(csv_paths=tuple(args.csv), kind=args.kind,
                          out_path=args.out, stat_order=order)
        report = render(spec)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {report.out_path} ({report.kind}: "
          f"{report.box_count or report.mark_count} marks, "
          f"{report.panel_count} panels)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
