"""Command-line entry point.

    maqt simulate    --config sim.json      --out DIR
    maqt compare     --config compare.json  --out DIR [--runs N]
    maqt bounds      [--n-min 1 --n-max 32 --j-min 0 --j-max 7] --out DIR
    maqt resettle    --config resettle.json --out DIR [--runs N]
    maqt sweep       --config sweep.json    --out DIR [--runs N]
    maqt adra-oracle --config adra.json     --out DIR

Every command writes a ``manifest.json`` next to its CSVs. Passing a manifest
back as ``--config`` regenerates byte-identical outputs.
Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .experiments import (
    DEFAULT_P_GRID,
    ExperimentSpec,
    ProtocolEntry,
    adra_oracle,
    compare_protocols,
    grid_search,
)
from .policy_tree import AgentParams
from .simulator import OBSERVERS, SimConfig, measure_resettling, run, write_rows
from .tree_analysis import bounds_table

log = logging.getLogger("maqt")

SIM_KEYS = {f.name for f in fields(SimConfig)}
PARAM_KEYS = {f.name for f in fields(AgentParams)}


class Source:
    """A parsed JSON config that can point errors at the offending line."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self.text = self.path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        try:
            self.data = json.loads(self.text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(self.data, dict):
            raise ConfigError(f"{path}:1: top level must be a JSON object")
        self.manifest = "command" in self.data and "config" in self.data
        if self.manifest:
            self.data = self.data["config"]

    def line_of(self, key: str) -> int:
        for i, line in enumerate(self.text.splitlines(), start=1):
            if f'"{key}"' in line:
                return i
        return 1

    def error(self, key: str | None, msg: str) -> ConfigError:
        return ConfigError(f"{self.path}:{self.line_of(key) if key else 1}: {msg}")

    def strict(self, d, allowed, where: str):
        if not isinstance(d, dict):
            raise self.error(None, f"{where} must be a JSON object")
        for key in d:
            if key not in allowed:
                raise self.error(key, f"unknown key {key!r} in {where}")
        return d


def _blame(src: Source, msg: str, keys) -> ConfigError:
    m = re.match(r"(\w+)", msg)
    key = m.group(1) if m and m.group(1) in keys else None
    return src.error(key, msg)


def sim_config(src: Source, d: dict, where="config", **overrides) -> SimConfig:
    d = dict(src.strict(d, SIM_KEYS, where))
    if "params" in d:
        try:
            d["params"] = AgentParams(**src.strict(d["params"], PARAM_KEYS, "params"))
        except ValueError as exc:
            raise _blame(src, str(exc), PARAM_KEYS) from None
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig(**d)
    except ConfigError as exc:
        raise _blame(src, str(exc), SIM_KEYS) from None
    except TypeError as exc:
        raise src.error(None, str(exc)) from None


def _sha(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, outputs) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "config_sha256": _sha(config),
        "seeds": {k: config[k] for k in ("event_seed", "agent_seed") if k in config}
                 or {k: config["base"][k] for k in ("event_seed", "agent_seed")
                     if k in config.get("base", {})},
        "outputs": {Path(p).name: hashlib.sha256(Path(p).read_bytes()).hexdigest()
                    for p in outputs},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _seed_overrides(args) -> dict:
    return {"event_seed": args.event_seed, "agent_seed": args.agent_seed}


def _protocol_entries(src: Source, items) -> list[ProtocolEntry]:
    entries = []
    for item in items:
        if isinstance(item, str):
            entries.append(ProtocolEntry(item))
            continue
        item = src.strict(item, {"protocol", "label", "overrides"}, "protocols entry")
        if "protocol" not in item:
            raise src.error("protocols", "protocols entry needs a 'protocol'")
        entries.append(ProtocolEntry(item["protocol"], item.get("label"),
                                     dict(item.get("overrides", {}))))
    return entries


def _experiment(src: Source, args, allowed) -> tuple[ExperimentSpec, dict]:
    d = src.strict(src.data, allowed, "config")
    base = sim_config(src, d.get("base", {}), "base", **_seed_overrides(args))
    protocols = [args.protocol] if args.protocol else d.get("protocols", [base.protocol])
    runs = args.runs or d.get("runs", 50)
    try:
        spec = ExperimentSpec(base, _protocol_entries(src, protocols), runs,
                              tuple(d.get("percentiles", (10, 90))), dict(d.get("grid", {})))
        for e in spec.protocols:
            spec.config_for(e)
    except (ConfigError, ValueError) as exc:
        raise src.error(None, str(exc)) from None
    resolved = {
        "base": base.to_dict(),
        "protocols": [{"protocol": e.protocol, "label": e.label, "overrides": e.overrides}
                      for e in spec.protocols],
        "runs": spec.runs,
        "percentiles": list(spec.percentiles),
    }
    if "grid" in allowed:
        resolved["grid"] = spec.grid
    return spec, resolved


# --- subcommands ----------------------------------------------------------------


def cmd_simulate(args) -> list[Path]:
    src = Source(args.config)
    overrides = _seed_overrides(args) | {"protocol": args.protocol}
    cfg = sim_config(src, src.data, **overrides)
    result = run(cfg)
    out = Path(args.out)
    paths = result.write_csv(out)
    log.info("simulated %d slots: utilization %.4f, mean AoI %.4f",
             cfg.T, result.utilization, result.mean_aoi())
    return paths + [write_manifest(out, "simulate", cfg.to_dict(), paths)]


def cmd_compare(args) -> list[Path]:
    src = Source(args.config)
    spec, resolved = _experiment(src, args, {"base", "protocols", "runs", "percentiles"})
    comparison = compare_protocols(spec, workers=args.workers)
    out = Path(args.out)
    paths = comparison.write_csv(out)
    for row in comparison.rows():
        log.info("%-10s mean AoI %.3f", row[0], row[2])
    return paths + [write_manifest(out, "compare", resolved, paths)]


def cmd_sweep(args) -> list[Path]:
    src = Source(args.config)
    allowed = {"base", "protocols", "runs", "percentiles", "grid", "objective"}
    spec, resolved = _experiment(src, args, allowed)
    objective = src.data.get("objective", "mean_aoi")
    resolved["objective"] = objective
    try:
        result = grid_search(spec, objective, workers=args.workers)
    except ConfigError as exc:
        raise src.error("grid", str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [result.write_csv(out / "grid.csv")]
    best = out / "best.json"
    best.write_text(json.dumps({"best": result.best, objective: result.best_value},
                               indent=2, sort_keys=True) + "\n")
    paths.append(best)
    log.info("best %s -> %s %.4f", result.best, objective, result.best_value)
    return paths + [write_manifest(out, "sweep", resolved, paths)]


def cmd_bounds(args) -> list[Path]:
    n_values = range(args.n_min, args.n_max + 1)
    depths = range(args.j_min, args.j_max + 1)
    rows = bounds_table(n_values, depths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bounds.csv"
    write_rows(path, ("n", "J", "best", "worst", "skew"), rows)
    config = {"n_min": args.n_min, "n_max": args.n_max, "j_min": args.j_min, "j_max": args.j_max}
    return [path, write_manifest(out, "bounds", config, [path])]


RESETTLE_COLUMNS = ("n", "event", "runs", "timeouts", "min", "q1", "median", "mean", "q3",
                    "max", "status")


def cmd_resettle(args) -> list[Path]:
    src = Source(args.config)
    d = src.strict(src.data, {"base", "n_values", "events", "runs", "cap", "observer"},
                   "config")
    base = sim_config(src, d.get("base", {"J": 5, "protocol": "maqt"}), "base",
                      **_seed_overrides(args))
    runs = args.runs or d.get("runs", 50)
    cap = d.get("cap", 100_000)
    n_values = d.get("n_values", [13, 18, 23, 28])
    events = d.get("events", ["arrival", "departure"])
    observer = d.get("observer", "success")
    if observer not in OBSERVERS:
        raise src.error("observer", f"observer must be one of {OBSERVERS}")
    for e in events:
        if e not in ("arrival", "departure"):
            raise src.error("events", f"unknown event {e!r}")
    rows, raw = [], []
    for n in n_values:
        for e in events:
            stats = measure_resettling(base, n, e, runs, cap, observer)
            s = stats.summary()
            rows.append((n, e, s["runs"], s["timeouts"], s["min"], s["q1"], s["median"],
                         s["mean"], s["q3"], s["max"], "timeout" if stats.timeouts else "ok"))
            raw.extend((n, e, i, t) for i, t in enumerate(stats.times))
            log.info("n=%d %s: mean %.1f max %.0f timeouts %d", n, e, s["mean"], s["max"],
                     stats.timeouts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "resettle.csv", out / "resettle_times.csv"]
    write_rows(paths[0], RESETTLE_COLUMNS, rows)
    write_rows(paths[1], ("n", "event", "sample", "slots"), raw)
    resolved = {"base": base.to_dict(), "n_values": list(n_values), "events": list(events),
                "runs": runs, "cap": cap, "observer": observer}
    return paths + [write_manifest(out, "resettle", resolved, paths)]


def cmd_adra_oracle(args) -> list[Path]:
    src = Source(args.config)
    d = src.strict(src.data, {"n_values", "p_grid", "theta_max_factor", "slots", "seed"},
                   "config")
    n_values = d.get("n_values", list(range(1, 33)))
    p_grid = d.get("p_grid", list(DEFAULT_P_GRID))
    factor = d.get("theta_max_factor", 4)
    slots = d.get("slots", 100_000)
    seed = d.get("seed", 0)
    table = adra_oracle(n_values, p_grid, lambda n: range(1, factor * n + 1), slots, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "adra_table.csv"
    table.write_csv(path)
    resolved = {"n_values": list(n_values), "p_grid": list(p_grid), "theta_max_factor": factor,
                "slots": slots, "seed": seed}
    return [path, write_manifest(out, "adra-oracle", resolved, [path])]


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "bounds": cmd_bounds,
    "resettle": cmd_resettle,
    "sweep": cmd_sweep,
    "adra-oracle": cmd_adra_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maqt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", default="out", help="output directory")
        if name == "bounds":
            p.add_argument("--n-min", type=int, default=1)
            p.add_argument("--n-max", type=int, default=32)
            p.add_argument("--j-min", type=int, default=0)
            p.add_argument("--j-max", type=int, default=7)
            continue
        p.add_argument("--config", required=True, help="JSON config or manifest")
        if name == "adra-oracle":
            continue
        p.add_argument("--event-seed", type=int)
        p.add_argument("--agent-seed", type=int)
        if name != "resettle":
            p.add_argument("--protocol")
        if name != "simulate":
            p.add_argument("--runs", type=int)
        if name in ("compare", "sweep"):
            p.add_argument("--workers", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        for path in COMMANDS[args.command](args):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
