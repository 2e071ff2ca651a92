"""Resettling time after one arrival or one departure, per n.

    python scripts/resettling.py [--runs 50] [--observer success|collision_free|both]

The "success" observer waits for 2^J consecutive successes; "collision_free"
also accepts idle slots, which is what a departure leaves behind.
"""
import argparse
import time
from pathlib import Path

from maqt.simulator import OBSERVERS, SimConfig, measure_resettling, write_rows

ap = argparse.ArgumentParser()
ap.add_argument("--n", type=int, nargs="+", default=[13, 18, 23, 28])
ap.add_argument("--runs", type=int, default=50)
ap.add_argument("--J", type=int, default=5)
ap.add_argument("--cap", type=int, default=100_000)
ap.add_argument("--agent-seed", type=int, default=1)
ap.add_argument("--observer", choices=OBSERVERS + ("both",), default="both")
ap.add_argument("--out", default="results/resettling")
args = ap.parse_args()

observers = OBSERVERS if args.observer == "both" else (args.observer,)
cfg = SimConfig(J=args.J, protocol="maqt", k=None, agent_seed=args.agent_seed)
out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
summary = []
for obs in observers:
    start = time.time()
    raw = []
    print(f"observer={obs}")
    print(f"{'n':>3} {'event':9} {'mean':>7} {'q1':>6} {'median':>6} {'q3':>6} {'max':>6} {'timeouts':>8}")
    for n in args.n:
        for event in ("arrival", "departure"):
            stats = measure_resettling(cfg, n, event, args.runs, cap=args.cap, observer=obs)
            s = stats.summary()
            print(f"{n:3d} {event:9} {s['mean']:7.1f} {s['q1']:6.0f} {s['median']:6.0f} "
                  f"{s['q3']:6.0f} {s['max']:6.0f} {s['timeouts']:8d}")
            summary.append((obs, n, event, s["mean"], s["q1"], s["median"], s["q3"], s["max"],
                            s["timeouts"]))
            raw.extend((n, event, r, v) for r, v in enumerate(stats.times))
    write_rows(out / f"resettle_{obs}.csv", ("n", "event", "run", "slots"), raw)
    print(f"  {time.time() - start:.0f}s")
write_rows(out / "summary.csv",
           ("observer", "n", "event", "mean", "q1", "median", "q3", "max", "timeouts"), summary)
