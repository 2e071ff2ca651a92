"""Multi-run orchestration: protocol comparison on a shared event stream,
per-batch percentile bands, parameter grid search and the ADRA table sweep."""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .agents import AdraParams, AdraTable
from .errors import ConfigError
from .policy_tree import AgentParams
from .rng import derive_key
from .simulator import RunResult, SimConfig, activation_events, run, write_rows

BAND_COLUMNS = ("batch_start", "mean", "p10", "p90", "min", "max")
COMPARISON_COLUMNS = ("protocol", "runs", "mean_aoi", "run_aoi_min", "run_aoi_max",
                      "utilization", "settled_fraction")

_PARAM_FIELDS = {f.name for f in fields(AgentParams)}
_CONFIG_FIELDS = {f.name for f in fields(SimConfig)} - {"params"}


def run_seed(agent_seed: int, run_index: int) -> int:
    return derive_key(agent_seed, run_index)


def apply_overrides(config: SimConfig, overrides: dict) -> SimConfig:
    """Set SimConfig fields or AgentParams fields by name."""
    params = {k: v for k, v in overrides.items() if k in _PARAM_FIELDS}
    plain = {k: v for k, v in overrides.items() if k in _CONFIG_FIELDS}
    unknown = set(overrides) - set(params) - set(plain)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)}")
    if params:
        plain["params"] = replace(config.params, **params)
    return replace(config, **plain)


@dataclass
class ProtocolEntry:
    protocol: str
    label: str | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label is None:
            self.label = self.protocol


@dataclass
class ExperimentSpec:
    base: SimConfig
    protocols: list = field(default_factory=lambda: ["maqt"])
    runs: int = 50
    percentiles: tuple = (10, 90)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        entries = []
        seen = {}
        for p in self.protocols:
            e = ProtocolEntry(p) if isinstance(p, str) else p
            if e.label in seen:
                seen[e.label] += 1
                e = replace(e, label=f"{e.label}#{seen[e.label]}")
            else:
                seen[e.label] = 1
            entries.append(e)
        self.protocols = entries

    def config_for(self, entry: ProtocolEntry) -> SimConfig:
        return apply_overrides(replace(self.base, protocol=entry.protocol), entry.overrides)


def run_batch(config: SimConfig, runs: int, workers: int | None = None, events=None,
              adra=None) -> list[RunResult]:
    """``runs`` independent agent seeds against one event stream, keyed by run index."""
    if events is None:
        events = activation_events(config)
    configs = [replace(config, agent_seed=run_seed(config.agent_seed, r)) for r in range(runs)]
    workers = workers or os.cpu_count() or 1
    if workers == 1 or runs == 1:
        return [run(c, events=events, adra=adra) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: run(c, events=events, adra=adra), configs))


def bands(matrix: np.ndarray, percentiles=(10, 90)) -> dict[str, np.ndarray]:
    """Column-wise mean, low/high percentiles, min and max of a runs x batches matrix."""
    lo, hi = percentiles
    with np.errstate(invalid="ignore"):
        return {
            "mean": np.nanmean(matrix, axis=0),
            "p10": np.nanpercentile(matrix, lo, axis=0),
            "p90": np.nanpercentile(matrix, hi, axis=0),
            "min": np.nanmin(matrix, axis=0),
            "max": np.nanmax(matrix, axis=0),
        }


@dataclass
class ProtocolSummary:
    label: str
    config: SimConfig
    results: list[RunResult]
    percentiles: tuple = (10, 90)

    @property
    def run_aoi(self) -> np.ndarray:
        return np.array([r.mean_aoi() for r in self.results])

    @property
    def run_utilization(self) -> np.ndarray:
        return np.array([r.utilization for r in self.results])

    @property
    def mean_aoi(self) -> float:
        return float(self.run_aoi.mean())

    def batch_matrix(self, metric: str) -> np.ndarray:
        return np.vstack([r.batch_arrays()[metric] for r in self.results])

    def band_rows(self, metric: str = "mean_aoi") -> list[tuple]:
        starts = self.results[0].batch_arrays()["t_start"].astype(int)
        b = bands(self.batch_matrix(metric), self.percentiles)
        return [(int(s),) + tuple(float(b[k][i]) for k in BAND_COLUMNS[1:])
                for i, s in enumerate(starts)]

    def row(self) -> tuple:
        aoi = self.run_aoi
        settled = float(np.mean([r.settled.mean() for r in self.results]))
        return (self.label, len(self.results), float(aoi.mean()), float(aoi.min()),
                float(aoi.max()), float(self.run_utilization.mean()), settled)


@dataclass
class Comparison:
    summaries: dict[str, ProtocolSummary]
    events: list

    def rows(self) -> list[tuple]:
        return [s.row() for s in self.summaries.values()]

    def __getitem__(self, label) -> ProtocolSummary:
        return self.summaries[label]

    def write_csv(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "comparison.csv", out_dir / "events.csv"]
        write_rows(paths[0], COMPARISON_COLUMNS, self.rows())
        write_rows(paths[1], ("t", "user_id", "event"),
                   [(e.t, e.user, e.kind) for e in self.events])
        for label, s in self.summaries.items():
            for metric, tag in (("mean_aoi", "aoi"), ("utilization", "utilization")):
                p = out_dir / f"bands_{label.replace('#', '_')}_{tag}.csv"
                write_rows(p, BAND_COLUMNS, s.band_rows(metric))
                paths.append(p)
        return paths


def compare_protocols(spec: ExperimentSpec, workers: int | None = None,
                      adra: AdraTable | None = None) -> Comparison:
    """Simulate every protocol against the identical activation event stream."""
    events = activation_events(spec.base)
    out = {}
    for entry in spec.protocols:
        cfg = spec.config_for(entry)
        results = run_batch(cfg, spec.runs, workers, events=events, adra=adra)
        out[entry.label] = ProtocolSummary(entry.label, cfg, results, tuple(spec.percentiles))
    return Comparison(out, events)


# --- grid search ----------------------------------------------------------------


@dataclass
class GridResult:
    names: tuple[str, ...]
    rows: list[tuple[tuple, float]]
    best: dict
    best_value: float
    objective: str

    def write_csv(self, path) -> Path:
        write_rows(path, self.names + (self.objective,),
                   [point + (value,) for point, value in self.rows])
        return Path(path)


OBJECTIVES = ("mean_aoi", "utilization")


def evaluate_point(spec: ExperimentSpec, point: dict, objective: str,
                   workers: int | None = None, adra=None) -> float:
    entry = spec.protocols[0]
    cfg = apply_overrides(spec.config_for(entry), point)
    results = run_batch(cfg, spec.runs, workers, adra=adra)
    if objective == "mean_aoi":
        return float(np.mean([r.mean_aoi() for r in results]))
    return float(np.mean([r.utilization for r in results]))


def grid_search(spec: ExperimentSpec, objective: str = "mean_aoi",
                workers: int | None = None, adra=None) -> GridResult:
    """Exhaustive search over ``spec.grid`` for the first protocol in ``spec``.

    Minimizes mean AoI (maximizes utilization). Points are visited in
    lexicographic order of the grid lists and only a strict improvement
    replaces the incumbent, so ties go to the earliest point.
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"objective must be one of {OBJECTIVES}")
    if not spec.grid or any(len(v) == 0 for v in spec.grid.values()):
        raise ConfigError("grid search needs a non-empty grid")
    if len(spec.protocols) != 1:
        raise ConfigError("grid search takes exactly one protocol")
    names = tuple(spec.grid)
    sign = 1.0 if objective == "mean_aoi" else -1.0
    rows = []
    best, best_value = None, math.inf
    for values in itertools.product(*(spec.grid[k] for k in names)):
        point = dict(zip(names, values))
        value = evaluate_point(spec, point, objective, workers, adra)
        rows.append((values, value))
        if sign * value < sign * best_value or best is None:
            best, best_value = point, value
    return GridResult(names, rows, best, best_value, objective)


# --- ADRA table -------------------------------------------------------------------

DEFAULT_P_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))


def adra_score(n: int, access_prob: float, threshold: float, slots: int,
               seed: int = 0, event_seed: int = 0) -> float:
    """Simulated mean AoI of ADRA with a fixed (p, theta) at static n."""
    params = AdraParams(access_prob, threshold)
    table = AdraTable({m: params for m in range(1, n + 1)})
    cfg = SimConfig(M=n, n0=n, k=None, T=slots, J=0, protocol="adra",
                    agent_seed=seed, event_seed=event_seed)
    return run(cfg, adra=table).mean_aoi()


def adra_oracle(n_values, p_grid=DEFAULT_P_GRID, theta_grid=None, slots: int = 100_000,
                seed: int = 0) -> AdraTable:
    """Per-n (p, theta) minimizing simulated mean AoI at static n.

    ``theta_grid`` maps n to candidate thresholds (default 1..4n). Every grid
    point reuses the same agent seed, so comparisons share random numbers.
    """
    entries, scores = {}, {}
    for n in n_values:
        thetas = theta_grid(n) if theta_grid else range(1, 4 * n + 1)
        best, best_value = None, math.inf
        for p in p_grid:
            for th in thetas:
                v = adra_score(n, float(p), float(th), slots, seed)
                if v < best_value:
                    best, best_value = (float(p), float(th)), v
        entries[n] = AdraParams(*best)
        scores[n] = best_value
    return AdraTable(entries, scores)
