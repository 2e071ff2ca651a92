"""Regenerate the shipped ADRA parameter table (src/maqt/data/adra_table.csv).

    python scripts/build_adra_table.py [--slots 100000] [--n-max 32] [--out PATH]
"""
import argparse
import time

from maqt.agents import DEFAULT_ADRA_TABLE
from maqt.experiments import DEFAULT_P_GRID, adra_oracle

ap = argparse.ArgumentParser()
ap.add_argument("--slots", type=int, default=100_000)
ap.add_argument("--n-max", type=int, default=32)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default=str(DEFAULT_ADRA_TABLE))
args = ap.parse_args()

start = time.time()
table = adra_oracle(range(1, args.n_max + 1), DEFAULT_P_GRID, slots=args.slots, seed=args.seed)
table.write_csv(args.out)
for n, e in table.entries.items():
    print(f"n={n:2d}  p={e.access_prob:.2f}  theta={e.aoi_threshold:4.0f}  aoi={table.scores[n]:.3f}")
print(f"wrote {args.out} in {time.time() - start:.0f}s")
