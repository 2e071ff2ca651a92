"""Best-case, worst-case and skewed-tree mean AoI of settled trees versus n.

    python scripts/aoi_bounds.py [--n-max 32] [--depths 4 5 6 7] [--out results/bounds]

Writes bounds.csv and prints a table. The min_depth columns are the best and worst
case at J = ceil(log2 n); the best one is also the best case at any deeper J.
"""
import argparse
from pathlib import Path

from maqt.simulator import write_rows
from maqt.tree_analysis import (
    InfeasibleError,
    best_case_aoi,
    min_depth,
    skew_bound,
    worst_case_aoi,
)

ap = argparse.ArgumentParser()
ap.add_argument("--n-max", type=int, default=32)
ap.add_argument("--depths", type=int, nargs="+", default=[4, 5, 6, 7])
ap.add_argument("--out", default="results/bounds")
args = ap.parse_args()

rows = []
for n in range(1, args.n_max + 1):
    d = min_depth(n)
    at_min = (best_case_aoi(n, d), worst_case_aoi(n, d))
    for J in args.depths:
        try:
            best, worst = best_case_aoi(n, J), worst_case_aoi(n, J)
        except InfeasibleError:
            continue
        skew = skew_bound(n) if 2 <= n <= J + 1 else float("nan")
        rows.append((n, J, best, worst, skew) + at_min)

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
write_rows(out / "bounds.csv", ("n", "J", "best", "worst", "skew", "best_min_depth", "worst_min_depth"), rows)

print(f"{'n':>3} {'J':>2} {'best':>9} {'worst':>9} {'skew':>9}")
for n, J, best, worst, skew, *_ in rows:
    print(f"{n:3d} {J:2d} {best:9.4f} {worst:9.4f} {skew:9.4f}")
print(f"wrote {out / 'bounds.csv'}")
