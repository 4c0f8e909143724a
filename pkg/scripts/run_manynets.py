#!/usr/bin/env python3
"""Many-networks regression study across R values, plus the boxplot figures.

For each requested network count R, runs the treatment-design experiment
(half the networks get a higher expected-degree law) and, when ardplots is
installed, renders the slope and percent-error boxplots across all R.
"""

import argparse
import sys
from pathlib import Path

from ardnet.cli import main as ardnet_main


def run(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/manynets")
    ap.add_argument("--seed", type=int, default=20240802)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--r", type=int, nargs="+", default=[50, 100, 200])
    ap.add_argument("--reps", type=int, default=100)
    args = ap.parse_args(argv)

    out = Path(args.out)
    csvs = []
    for r in args.r:
        rdir = out / f"r{r}"
        code = ardnet_main([
            "manynets", "--seed", str(args.seed), "--out", str(rdir),
            "--threads", str(args.threads),
            "--set", f"manynets.r={r}",
            "--set", f"manynets.reps={args.reps}",
        ])
        if code != 0:
            return code
        csvs.append(str(rdir / "manynets.csv"))
    try:
        from ardplots import FigureSpec, render
    except ImportError:
        print("ardplots not installed; skipping figures")
        return 0
    beta = render(FigureSpec(tuple(csvs), "beta_boxplot", str(out / "beta_boxplot.png")))
    gamma = render(FigureSpec(tuple(csvs), "gamma_boxplot", str(out / "gamma_pct_err.png")))
    print(f"figures: {beta.out_path}, {gamma.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
