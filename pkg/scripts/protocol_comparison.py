"""Dynamic-scenario comparison: all protocols on one shared activation stream.

    python scripts/protocol_comparison.py [--config configs/compare.json] [--runs 50]

A thin wrapper over ``maqt compare`` that also prints the ranking.
"""
import argparse
import csv
import sys
from pathlib import Path

from maqt.cli import main

ap = argparse.ArgumentParser()
ap.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "compare.json"))
ap.add_argument("--runs", type=int, default=None)
ap.add_argument("--out", default="results/comparison")
args = ap.parse_args()

argv = ["compare", "--config", args.config, "--out", args.out]
if args.runs:
    argv += ["--runs", str(args.runs)]
code = main(argv)
if code:
    sys.exit(code)
with open(Path(args.out) / "comparison.csv", newline="") as fh:
    rows = sorted(csv.DictReader(fh), key=lambda r: float(r["mean_aoi"]))
print(f"{'protocol':14} {'mean AoI':>9} {'utilization':>11} {'settled':>8}")
for r in rows:
    print(f"{r['protocol']:14} {float(r['mean_aoi']):9.3f} {float(r['utilization']):11.3f} "
          f"{float(r['settled_fraction']):8.3f}")
