"""Slotted collision channel with ternary feedback and per-user AoI tracking.

One slot, in order: scheduled activity flips; every active user decides;
the channel reports idle / success / collision; active agents learn from the
feedback; AoI advances (reset to 1 for the successful transmitter). The slot
record stores the AoI values *before* the update, so a user delivering every
``P`` slots shows the sawtooth 1, 2, ..., P.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

from .agents import (
    COLLISION,
    COUNTER,
    IDLE,
    N_ISTATE,
    N_OPS,
    SUCCESS,
    AdraTable,
    Feedback,
    _alohaq_decide,
    _alohaq_observe,
    _alohaq_reset,
    _qt_decide,
    _qt_observe,
    _qt_reset,
    load_default_adra_table,
)
from .errors import ConfigError
from .policy_tree import AgentParams, table_size
from .rng import Stream, derive, derive_key, root_key, uniform_at

PROTOCOLS = ("rr", "sa", "adra", "aloha_q", "aloha_qt", "maqt")
P_RR, P_SA, P_ADRA, P_ALOHAQ, P_ALOHAQT, P_MAQT = range(6)
TREE_PROTOCOLS = ("aloha_qt", "maqt")

# settledness observers: 2**J consecutive successes (the agents' own rule), or
# 2**J consecutive slots without a collision (idle slots tolerated)
OBSERVERS = ("success", "collision_free")

EVENT_LABEL = 0xE7E7
RESETTLE_LABEL = 0x5E77


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    ``k`` is the mean number of slots a user stays in a state (per-slot flip
    probability ``1/k``); ``k=None`` keeps the population static.
    """

    M: int = 32
    k: float | None = 50_000
    n0: int = 16
    T: int = 50_000
    J: int = 5
    batch: int = 100
    protocol: str = "maqt"
    params: AgentParams = field(default_factory=AgentParams)
    alohaq_lr: float = 0.1
    frame_size: int | None = None
    adra_table: str | None = None
    event_seed: int = 2022
    agent_seed: int = 1

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}; choose from {PROTOCOLS}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if not 1 <= self.n0 <= self.M:
            raise ConfigError("n0 must satisfy 1 <= n0 <= M")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if not 0 <= self.J <= 20:
            raise ConfigError("J must lie in [0, 20]")
        if self.k is not None and self.k < 1:
            raise ConfigError("k must be >= 1 (or null for a static population)")
        if self.frame_size is not None and self.frame_size < 1:
            raise ConfigError("frame_size must be >= 1")
        if self.alohaq_lr <= 0:
            raise ConfigError("alohaq_lr must be positive")
        for name in ("event_seed", "agent_seed"):
            v = getattr(self, name)
            if not 0 <= v < 1 << 64:
                raise ConfigError(f"{name} must be an unsigned 64-bit integer")
        if self.protocol == "maqt" and self.k is not None and self.k / self.M < 2000:
            warnings.warn(
                f"k/M = {self.k / self.M:.0f} < 2000: events may arrive faster than "
                "the tree resettles", stacklevel=3)

    @property
    def frame(self) -> int:
        return self.frame_size if self.frame_size is not None else 1 << self.J

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        return d


@dataclass(frozen=True)
class Event:
    t: int
    user: int
    kind: str  # "arrive" | "depart"


def activation_events(config: SimConfig) -> list[Event]:
    """Geometric holding times per user, drawn from the event seed only."""
    if config.k is None:
        return []
    p = 1.0 / config.k
    events = []
    for user in range(config.M):
        rng = Stream.from_seed(config.event_seed, EVENT_LABEL, user)
        active = user < config.n0
        t = 0
        while True:
            if p >= 1.0:
                gap = 1
            else:
                gap = max(1, math.ceil(math.log1p(-rng.uniform()) / math.log1p(-p)))
            t += gap
            if t >= config.T:
                break
            active = not active
            events.append(Event(t, user, "arrive" if active else "depart"))
    events.sort(key=lambda e: (e.t, e.user))
    return events


# --- slot kernel -------------------------------------------------------------


@njit(cache=True, nogil=True)
def _activate(i, proto, depth, w_init, gamma0, gamma1, agent_key,
              active, aoi, epochs, keys, W, ist, fst, Q):
    active[i] = True
    aoi[i] = 1
    epochs[i] += 1
    keys[i] = derive(derive(agent_key, i), epochs[i])
    if proto == P_ALOHAQT or proto == P_MAQT:
        _qt_reset(W[i], ist[i], fst[i], depth, w_init, gamma0, gamma1, keys[i])
    elif proto == P_ALOHAQ:
        _alohaq_reset(Q[i], ist[i], keys[i])
    else:
        ist[i, :] = 0


@njit(cache=True, nogil=True)
def _advance(proto, depth, alpha_plus, alpha_minus, epsilon, eta, w_init, gamma0, gamma1,
             lr, adra_p, adra_th, agent_key,
             active, aoi, epochs, keys, W, ist, fst, Q, ops,
             ev_t, ev_u, cursor, gstreak, t0, t1, stop_streak, stop_kind,
             rec_n, rec_fb, rec_aoi, rec_settled, trace_aoi, trace_tx):
    M = active.shape[0]
    idx = np.empty(depth + 1, dtype=np.int64)
    tx = np.zeros(M, dtype=np.bool_)
    window = 1 << depth
    tracing = trace_aoi.shape[0] > 0
    maqt = proto == P_MAQT
    t = t0
    while t < t1:
        while cursor[0] < ev_t.shape[0] and ev_t[cursor[0]] == t:
            u = ev_u[cursor[0]]
            if active[u]:
                active[u] = False
            else:
                _activate(u, proto, depth, w_init, gamma0, gamma1, agent_key,
                          active, aoi, epochs, keys, W, ist, fst, Q)
            cursor[0] += 1

        n = 0
        for i in range(M):
            if active[i]:
                n += 1
        rr_turn = t % n if n > 0 else -1

        ntx = 0
        rank = 0
        for i in range(M):
            tx[i] = False
            if not active[i]:
                continue
            if proto == P_RR:
                tx[i] = rank == rr_turn
                rank += 1
            elif proto == P_SA:
                c = ist[i, COUNTER]
                tx[i] = uniform_at(keys[i], c) < 1.0 / n
                ist[i, COUNTER] = c + 1
            elif proto == P_ADRA:
                if aoi[i] >= adra_th[n]:
                    c = ist[i, COUNTER]
                    tx[i] = uniform_at(keys[i], c) < adra_p[n]
                    ist[i, COUNTER] = c + 1
            elif proto == P_ALOHAQ:
                tx[i] = _alohaq_decide(Q[i], ist[i])
            else:
                tx[i] = _qt_decide(W[i], ist[i], depth, maqt, eta, ops)
            if tx[i]:
                ntx += 1

        if ntx == 0:
            fb = IDLE
        elif ntx == 1:
            fb = SUCCESS
        else:
            fb = COLLISION

        r = t - t0
        total = 0
        for i in range(M):
            if active[i]:
                total += aoi[i]
        rec_n[r] = n
        rec_fb[r] = fb
        rec_aoi[r] = total
        # [0]: consecutive successes, [1]: consecutive collision-free slots
        if fb == SUCCESS:
            gstreak[0] += 1
        else:
            gstreak[0] = 0
        if fb == COLLISION:
            gstreak[1] = 0
        else:
            gstreak[1] += 1
        rec_settled[r] = gstreak[0] >= window
        if tracing:
            for i in range(M):
                trace_aoi[r, i] = aoi[i] if active[i] else 0
                trace_tx[r, i] = tx[i]

        for i in range(M):
            if not active[i]:
                continue
            if proto == P_ALOHAQ:
                _alohaq_observe(Q[i], ist[i], fb, tx[i], lr, ops)
            elif proto == P_ALOHAQT or proto == P_MAQT:
                _qt_observe(W[i], ist[i], fst[i], depth, maqt, fb, tx[i], alpha_plus,
                            alpha_minus, epsilon, w_init, keys[i], idx, ops)
            if tx[i] and fb == SUCCESS:
                aoi[i] = 1
            else:
                aoi[i] += 1
        t += 1
        if stop_streak > 0 and gstreak[stop_kind] >= stop_streak:
            break
    return t


# --- Python-side run state ----------------------------------------------------


@dataclass(frozen=True)
class SlotRecord:
    t: int
    n: int
    feedback: Feedback
    mean_aoi: float | None
    settled: bool


class Network:
    """Mutable state of one run; ``advance`` hands whole stretches to the kernel."""

    def __init__(self, config: SimConfig, events: list[Event] | None = None,
                 trace: bool = False, adra: AdraTable | None = None):
        self.config = config
        self.proto = PROTOCOLS.index(config.protocol)
        self.events = activation_events(config) if events is None else list(events)
        self.trace = trace
        M, J = config.M, config.J
        self.agent_key = np.uint64(root_key(config.agent_seed))
        self.active = np.zeros(M, dtype=np.bool_)
        self.aoi = np.zeros(M, dtype=np.int64)
        self.epochs = np.zeros(M, dtype=np.int64)
        self.keys = np.zeros(M, dtype=np.uint64)
        tree = config.protocol in TREE_PROTOCOLS
        self.W = np.zeros((M, table_size(J) if tree else 1))
        self.ist = np.zeros((M, N_ISTATE), dtype=np.int64)
        self.fst = np.zeros((M, 1))
        self.Q = np.zeros((M, config.frame if config.protocol == "aloha_q" else 1))
        self.ops = np.zeros(N_OPS, dtype=np.int64)
        self.ev_t = np.array([e.t for e in self.events], dtype=np.int64)
        self.ev_u = np.array([e.user for e in self.events], dtype=np.int64)
        self.cursor = np.zeros(1, dtype=np.int64)
        self.gstreak = np.zeros(2, dtype=np.int64)
        self.adra_p = np.zeros(M + 1)
        self.adra_th = np.zeros(M + 1)
        if config.protocol == "adra":
            table = adra or (AdraTable.read_csv(config.adra_table) if config.adra_table
                             else load_default_adra_table())
            # a static population only ever sees n0 active users
            needed = range(1, M + 1) if self.events else (config.n0,)
            for n in needed:
                table[n]  # raises ConfigError for gaps
            self.adra_p, self.adra_th = table.arrays(M)
        self.t = 0
        self._chunks = []
        for i in range(config.n0):
            self.activate(i)

    # population control, used by the resettling experiment
    def activate(self, user: int) -> None:
        c, p = self.config, self.config.params
        _activate(user, self.proto, c.J, p.w_init, p.gamma0, p.gamma1, self.agent_key,
                  self.active, self.aoi, self.epochs, self.keys, self.W, self.ist,
                  self.fst, self.Q)

    def deactivate(self, user: int) -> None:
        self.active[user] = False

    def reset_streak(self) -> None:
        self.gstreak[:] = 0

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def advance(self, t1: int, stop_on_settle: bool = False, observer: str = "success") -> int:
        """Run slots ``[self.t, t1)``; optionally stop once the observer deems the
        tree settled (see ``OBSERVERS``). Returns the new slot index."""
        c, p = self.config, self.config.params
        length = max(0, t1 - self.t)
        rec = (np.zeros(length, dtype=np.int64), np.zeros(length, dtype=np.int8),
               np.zeros(length, dtype=np.int64), np.zeros(length, dtype=np.bool_))
        if self.trace:
            tr = (np.zeros((length, c.M), dtype=np.int64), np.zeros((length, c.M), dtype=np.bool_))
        else:
            tr = (np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0), dtype=np.bool_))
        t0 = self.t
        self.t = int(_advance(
            self.proto, c.J, p.alpha_plus, p.alpha_minus, p.epsilon, p.eta, p.w_init,
            p.gamma0, p.gamma1, c.alohaq_lr, self.adra_p, self.adra_th, self.agent_key,
            self.active, self.aoi, self.epochs, self.keys, self.W, self.ist, self.fst,
            self.Q, self.ops, self.ev_t, self.ev_u, self.cursor, self.gstreak,
            t0, t1, (1 << c.J) if stop_on_settle else 0, OBSERVERS.index(observer),
            *rec, *tr))
        used = self.t - t0
        self._chunks.append(tuple(a[:used] for a in rec + tr))
        return self.t

    def step(self) -> SlotRecord:
        self.advance(self.t + 1)
        n, fb, total, settled = (a[0] for a in self._chunks[-1][:4])
        return SlotRecord(self.t - 1, int(n), Feedback(int(fb)),
                          total / n if n else None, bool(settled))

    def records(self):
        """Concatenated per-slot arrays (n, feedback, aoi_sum, settled[, aoi, tx])."""
        if not self._chunks:
            return None
        return tuple(np.concatenate(parts) for parts in zip(*self._chunks))


# --- run summaries -------------------------------------------------------------


BATCH_COLUMNS = ("t_start", "n", "utilization", "mean_aoi", "settled_fraction")
EVENT_COLUMNS = ("t", "user_id", "event")


@dataclass
class RunResult:
    config: SimConfig
    n: np.ndarray
    feedback: np.ndarray
    aoi_sum: np.ndarray
    settled: np.ndarray
    events: list[Event]
    aoi_trace: np.ndarray | None = None
    tx_trace: np.ndarray | None = None

    @property
    def successes(self) -> int:
        return int((self.feedback == SUCCESS).sum())

    @property
    def utilization(self) -> float:
        return self.successes / len(self.feedback)

    def slot_mean_aoi(self) -> np.ndarray:
        """Per-slot average AoI over active users; NaN when nobody is active."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n > 0, self.aoi_sum / np.maximum(self.n, 1), np.nan)

    def mean_aoi(self) -> float:
        """Time average, over slots with at least one active user, of the
        active-user mean AoI."""
        m = self.slot_mean_aoi()
        return float(np.nanmean(m)) if np.any(self.n > 0) else math.nan

    def batches(self) -> list[tuple]:
        b = self.config.batch
        rows = []
        m = self.slot_mean_aoi()
        for start in range(0, len(self.n), b):
            sl = slice(start, start + b)
            seg = m[sl]
            ok = ~np.isnan(seg)
            rows.append((
                start,
                int(self.n[start]),
                float((self.feedback[sl] == SUCCESS).mean()),
                float(seg[ok].mean()) if ok.any() else math.nan,
                float(self.settled[sl].mean()),
            ))
        return rows

    def batch_arrays(self) -> dict[str, np.ndarray]:
        rows = self.batches()
        return {name: np.array([r[i] for r in rows]) for i, name in enumerate(BATCH_COLUMNS)}

    def settled_intervals(self) -> list[tuple[int, int]]:
        """Maximal half-open slot ranges during which the observer saw a settled tree."""
        out = []
        s = np.concatenate(([False], self.settled, [False])).astype(np.int8)
        d = np.diff(s)
        for a, b in zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)):
            out.append((int(a), int(b)))
        return out

    def write_csv(self, out_dir, prefix: str = "run") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        batch_path = out_dir / f"{prefix}_batches.csv"
        events_path = out_dir / f"{prefix}_events.csv"
        write_rows(batch_path, BATCH_COLUMNS, self.batches())
        write_rows(events_path, EVENT_COLUMNS, [(e.t, e.user, e.kind) for e in self.events])
        return [batch_path, events_path]


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def run(config: SimConfig, trace: bool = False, events: list[Event] | None = None,
        adra: AdraTable | None = None) -> RunResult:
    net = Network(config, events=events, trace=trace, adra=adra)
    net.advance(config.T)
    recs = net.records()
    return RunResult(config, *recs[:4], events=net.events,
                     aoi_trace=recs[4] if trace else None,
                     tx_trace=recs[5] if trace else None)


def detect_settled(history, depth: int) -> bool:
    """True iff the last 2**depth outcomes were all successes."""
    window = 1 << depth
    if len(history) < window:
        return False
    return all(int(f) == SUCCESS for f in list(history)[-window:])


def agent_stream(agent_seed: int, user: int, epoch: int = 1) -> Stream:
    """The stream the kernel gives ``user`` on its ``epoch``-th activation."""
    return Stream(root_key(agent_seed)).spawn(user).spawn(epoch)


# --- resettling -----------------------------------------------------------------


@dataclass
class ResettleStats:
    n: int
    event: str
    times: list[int]
    timeouts: int

    def summary(self) -> dict:
        t = np.array(self.times, dtype=float)
        if t.size == 0:
            keys = ("min", "q1", "median", "mean", "q3", "max")
            return dict(dict.fromkeys(keys, math.nan), runs=self.timeouts, timeouts=self.timeouts)
        return {
            "min": float(t.min()),
            "q1": float(np.percentile(t, 25)),
            "median": float(np.median(t)),
            "mean": float(t.mean()),
            "q3": float(np.percentile(t, 75)),
            "max": float(t.max()),
            "runs": len(self.times) + self.timeouts,
            "timeouts": self.timeouts,
        }


def resettle_once(config: SimConfig, n: int, event: str, run_index: int,
                  cap: int = 100_000, observer: str = "success") -> int | None:
    """Settle ``n`` static users, inject one arrival or departure, and return the
    slots until the observer sees a settled tree again (None on timeout).

    The initial settling always uses the success observer, so every run starts
    from a tree the agents themselves consider settled.
    """
    if event not in ("arrival", "departure"):
        raise ValueError("event must be 'arrival' or 'departure'")
    if observer not in OBSERVERS:
        raise ValueError(f"observer must be one of {OBSERVERS}")
    window = 1 << config.J
    M = n + 1 if event == "arrival" else n
    cfg = replace(config, M=M, n0=n, k=None, T=cap,
                  agent_seed=derive_key(config.agent_seed, RESETTLE_LABEL, run_index))
    net = Network(cfg, events=[])
    net.advance(cap, stop_on_settle=True)
    if net.gstreak[0] < window:
        return None
    t_event = net.t
    if event == "arrival":
        net.activate(n)
    else:
        pick = Stream.from_seed(config.event_seed, RESETTLE_LABEL, run_index).uniform()
        net.deactivate(int(pick * n))
    net.reset_streak()
    net.advance(t_event + cap, stop_on_settle=True, observer=observer)
    if net.gstreak[OBSERVERS.index(observer)] < window:
        return None
    return net.t - t_event


def measure_resettling(config: SimConfig, n: int, event: str, runs: int,
                       cap: int = 100_000, observer: str = "success") -> ResettleStats:
    times, timeouts = [], 0
    for r in range(runs):
        t = resettle_once(config, n, event, r, cap, observer)
        if t is None:
            timeouts += 1
        else:
            times.append(t)
    return ResettleStats(n, event, times, timeouts)
