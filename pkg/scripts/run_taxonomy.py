#!/usr/bin/env python3
"""Single-large-graph recoverability study at paper scale, plus the figure.

Runs the scaled-MSE taxonomy over all statistics (n=250, 250 replicates,
B=100 expectation draws) and renders the two-panel scaled-MSE figure when
ardplots is available.
"""

import argparse
import sys
from pathlib import Path

from ardnet.cli import main as ardnet_main


def run(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/taxonomy")
    ap.add_argument("--seed", type=int, default=20240801)
    ap.add_argument("--threads", type=int, default=8)
    ap.add_argument("--replicates", type=int, default=250)
    ap.add_argument("--b", type=int, default=100)
    ap.add_argument("--source", choices=["true", "fitted"], default="true")
    args = ap.parse_args(argv)

    out = Path(args.out)
    code = ardnet_main([
        "taxonomy", "--seed", str(args.seed), "--out", str(out),
        "--threads", str(args.threads),
        "--set", f"taxonomy.replicates={args.replicates}",
        "--set", f"taxonomy.b={args.b}",
        "--set", f"taxonomy.source={args.source}",
    ])
    if code != 0:
        return code
    try:
        from ardplots import FigureSpec, render
    except ImportError:
        print("ardplots not installed; skipping figure")
        return 0
    rep = render(FigureSpec((str(out / "taxonomy.csv"),), "mse_panel",
                            str(out / "scaled_mse.png")))
    print(f"figure: {rep.out_path}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
