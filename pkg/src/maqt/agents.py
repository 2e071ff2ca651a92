"""Medium-access agents: ALOHA-QT, mAQT, ALOHA-Q, slotted ALOHA, ADRA and a
round-robin genie.

The tree and Q-learning agents keep their state in small numpy arrays so that
the same numba step functions drive both the Python objects here and the slot
kernel in :mod:`maqt.simulator`.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .errors import ConfigError, ProtocolViolation
from .policy_tree import (
    AgentParams,
    Schedule,
    WeightTable,
    _active_indices,
    _argmax_first,
    _clamp_and_sum,
    _init_weights,
    _multiplicative_update,
    _redistribute,
    _schedule_fires,
    active_set,
    table_size,
)
from .rng import Stream, uniform_at


class Feedback(enum.IntEnum):
    IDLE = 0
    SUCCESS = 1
    COLLISION = 2

    @classmethod
    def from_count(cls, transmitters: int) -> "Feedback":
        if transmitters == 0:
            return cls.IDLE
        return cls.SUCCESS if transmitters == 1 else cls.COLLISION


IDLE, SUCCESS, COLLISION = 0, 1, 2

# integer state columns of a tree agent
T_LOCAL, SETTLED, STREAK, SELECTED, COUNTER = range(5)
N_ISTATE = 5
# ALOHA-Q reuses T_LOCAL and COUNTER; the chosen frame slot lives in SELECTED
CHOSEN = SELECTED

# per-slot weight access counters, one per step of the learning loop
OP_SELECT, OP_UPDATE, OP_RELINQUISH, OP_NORMALIZE, OP_BOUND = range(5)
N_OPS = 5
OP_NAMES = ("select", "update", "relinquish", "normalize", "bound")


# --- tree agents -------------------------------------------------------------


@njit(cache=True, nogil=True)
def _reward(feedback, transmit, alpha_plus, alpha_minus):
    """Positive reward for a correct guess: silence on an idle slot, or own success."""
    if (feedback == IDLE and not transmit) or (feedback == SUCCESS and transmit):
        return alpha_plus
    return alpha_minus


def select_reward(feedback: Feedback, transmit: bool, params: AgentParams) -> float:
    return float(_reward(int(feedback), bool(transmit), params.alpha_plus, params.alpha_minus))


@njit(cache=True, nogil=True)
def _qt_reset(w, ist, fst, depth, w_init, gamma0, gamma1, key):
    ist[:] = 0
    ist[COUNTER] = _init_weights(w, depth, w_init, gamma0, gamma1, key, 0)
    fst[0] = w.sum()
    ist[SELECTED] = _argmax_first(w)


@njit(cache=True, nogil=True)
def _qt_decide(w, ist, depth, maqt, eta, ops):
    t = ist[T_LOCAL]
    if maqt and ist[SETTLED] == 1:
        return _schedule_fires(ist[SELECTED], t)
    n = w.shape[0]
    best = _argmax_first(w)
    ops[OP_SELECT] += n
    ist[SELECTED] = best
    transmit = _schedule_fires(best, t)
    if not maqt:
        # threshold set {w > eta}, scanned over the whole tree
        ops[OP_SELECT] += n
        i = 0
        for l in range(depth + 1):
            p = 1 << l
            phase = t & (p - 1)
            for c in range(p):
                if w[i] > eta and c == phase:
                    transmit = True
                i += 1
    return transmit


@njit(cache=True, nogil=True)
def _qt_observe(w, ist, fst, depth, maqt, feedback, transmit, alpha_plus, alpha_minus,
                epsilon, w_init, key, idx, ops):
    if transmit and feedback == IDLE:
        raise ProtocolViolation("transmitted but the slot was reported idle")
    t = ist[T_LOCAL]
    if maqt and ist[SETTLED] == 1:
        # frozen schedule: only the slot counter and the success streak move
        if feedback == SUCCESS:
            ist[STREAK] += 1
        else:
            ist[SETTLED] = 0
            ist[STREAK] = 0
        ist[T_LOCAL] = t + 1
        return

    alpha = _reward(feedback, transmit, alpha_plus, alpha_minus)
    n = w.shape[0]
    _active_indices(t, depth, idx)
    counter = ist[COUNTER]
    before = fst[0]
    counter, change = _multiplicative_update(w, idx, alpha, key, counter)
    ops[OP_UPDATE] += depth + 1
    after = before + change

    if not maqt:
        u = uniform_at(key, counter)
        counter += 1
        if u <= epsilon:
            for j in range(depth + 1):
                after -= w[idx[j]]
                w[idx[j]] = 0.0
            ops[OP_RELINQUISH] += depth + 1

    delta = before - after
    if delta > 0.0 and after < w_init * n:
        counter = _redistribute(w, delta, key, counter)
        ops[OP_NORMALIZE] += n

    fst[0] = _clamp_and_sum(w)
    ops[OP_BOUND] += n
    ist[COUNTER] = counter
    ist[T_LOCAL] = t + 1

    if maqt:
        if feedback == SUCCESS:
            ist[STREAK] += 1
        else:
            ist[STREAK] = 0
        if ist[STREAK] >= (1 << depth):
            # freeze the schedule chosen in this slot's selection step
            ist[SETTLED] = 1


VARIANTS = ("aloha_qt", "maqt")


class QtAgent:
    """One user running ALOHA-QT (``variant="aloha_qt"``) or mAQT (``"maqt"``).

    The agent owns its random stream: construction seeds the weight table from
    ``rng`` and later draws continue on the same key.
    """

    def __init__(self, variant: str, depth: int, params: AgentParams, rng: Stream):
        if variant not in VARIANTS:
            raise ValueError(f"unknown tree variant {variant!r}")
        self.variant = variant
        self.depth = depth
        self.params = params
        self.key = rng.key
        self.weights = np.empty(table_size(depth))
        self.istate = np.zeros(N_ISTATE, dtype=np.int64)
        self.fstate = np.zeros(1)
        self.ops = np.zeros(N_OPS, dtype=np.int64)
        self._idx = np.empty(depth + 1, dtype=np.int64)
        _qt_reset(self.weights, self.istate, self.fstate, depth, params.w_init,
                  params.gamma0, params.gamma1, np.uint64(self.key))
        rng.counter = int(self.istate[COUNTER])

    @property
    def maqt(self) -> bool:
        return self.variant == "maqt"

    @property
    def t_local(self) -> int:
        return int(self.istate[T_LOCAL])

    @property
    def settled(self) -> bool:
        return bool(self.istate[SETTLED])

    @property
    def streak(self) -> int:
        return int(self.istate[STREAK])

    @property
    def table(self) -> WeightTable:
        return WeightTable(self.depth, self.weights.copy())

    @property
    def actives(self) -> list[Schedule]:
        return active_set(self.t_local, self.depth)

    @property
    def selected(self) -> Schedule:
        """The primary (maximum-weight, or frozen) schedule."""
        return Schedule.from_index(int(self.istate[SELECTED]))

    def policy(self) -> set[Schedule]:
        if self.maqt:
            return {self.selected}
        chosen = {Schedule.from_index(_argmax_first(self.weights))}
        chosen.update(Schedule.from_index(i) for i in np.flatnonzero(self.weights > self.params.eta))
        return chosen

    def decide(self) -> bool:
        self.ops[:] = 0
        return bool(_qt_decide(self.weights, self.istate, self.depth, self.maqt,
                               self.params.eta, self.ops))

    def observe(self, feedback: Feedback, transmit: bool) -> None:
        p = self.params
        _qt_observe(self.weights, self.istate, self.fstate, self.depth, self.maqt,
                    int(feedback), bool(transmit), p.alpha_plus, p.alpha_minus,
                    p.epsilon, p.w_init, np.uint64(self.key), self._idx, self.ops)

    def slot_ops(self) -> dict[str, int]:
        """Weight-table entries touched by each step during the last slot."""
        return dict(zip(OP_NAMES, (int(v) for v in self.ops)))


# --- ALOHA-Q -----------------------------------------------------------------

Q_INIT_NOISE = 1e-3


@njit(cache=True, nogil=True)
def _alohaq_reset(q, ist, key):
    ist[:] = 0
    for i in range(q.shape[0]):
        q[i] = Q_INIT_NOISE * uniform_at(key, i)
    ist[COUNTER] = q.shape[0]
    ist[CHOSEN] = _argmax_first(q)


@njit(cache=True, nogil=True)
def _alohaq_decide(q, ist):
    return ist[T_LOCAL] % q.shape[0] == ist[CHOSEN]


@njit(cache=True, nogil=True)
def _alohaq_observe(q, ist, feedback, transmit, lr, ops):
    if transmit and feedback == IDLE:
        raise ProtocolViolation("transmitted but the slot was reported idle")
    if transmit:
        c = ist[CHOSEN]
        reward = 1.0 if feedback == SUCCESS else -1.0
        q[c] += lr * (reward - q[c])
        ops[OP_UPDATE] += 1
    ist[T_LOCAL] += 1
    if ist[T_LOCAL] % q.shape[0] == 0:
        ist[CHOSEN] = _argmax_first(q)
        ops[OP_SELECT] += q.shape[0]


class AlohaQAgent:
    """Frame-based Q-learning: one slot per frame of ``frame_size`` slots.

    Q-values start at small uniform noise so that simultaneously started users
    pick different slots; the chosen slot is re-selected at every frame end.
    """

    def __init__(self, frame_size: int, rng: Stream, lr: float = 0.1):
        self.q = np.empty(frame_size)
        self.istate = np.zeros(N_ISTATE, dtype=np.int64)
        self.ops = np.zeros(N_OPS, dtype=np.int64)
        self.lr = lr
        _alohaq_reset(self.q, self.istate, np.uint64(rng.key))
        rng.counter = int(self.istate[COUNTER])

    @property
    def frame_size(self) -> int:
        return self.q.shape[0]

    @property
    def chosen_slot(self) -> int:
        return int(self.istate[CHOSEN])

    def decide(self) -> bool:
        self.ops[:] = 0
        return bool(_alohaq_decide(self.q, self.istate))

    def observe(self, feedback: Feedback, transmit: bool) -> None:
        _alohaq_observe(self.q, self.istate, int(feedback), bool(transmit), self.lr, self.ops)


# --- genie-assisted baselines ------------------------------------------------


def sa_decide(n: int, rng: Stream) -> bool:
    """Slotted ALOHA with the optimal access probability 1/n."""
    if n < 1:
        raise ValueError("slotted ALOHA needs n >= 1")
    return rng.uniform() < 1.0 / n


@dataclass(frozen=True)
class AdraParams:
    access_prob: float
    aoi_threshold: float

    def __post_init__(self):
        if not 0 < self.access_prob <= 1:
            raise ConfigError("access_prob must lie in (0, 1]")
        if self.aoi_threshold < 1:
            raise ConfigError("aoi_threshold must be >= 1")


class AdraTable:
    """ADRA access probability and AoI threshold, tabulated per active-user count."""

    columns = ("n", "access_prob", "aoi_threshold")

    def __init__(self, entries: dict[int, AdraParams], scores: dict[int, float] | None = None):
        self.entries = dict(sorted(entries.items()))
        self.scores = dict(scores or {})

    def __getitem__(self, n: int) -> AdraParams:
        try:
            return self.entries[n]
        except KeyError:
            raise ConfigError(f"ADRA table has no entry for n={n}") from None

    def __contains__(self, n):
        return n in self.entries

    def __len__(self):
        return len(self.entries)

    def arrays(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (access_prob, threshold) arrays indexed by n; missing rows are NaN."""
        p = np.full(size + 1, np.nan)
        th = np.full(size + 1, np.nan)
        for n, e in self.entries.items():
            if n <= size:
                p[n], th[n] = e.access_prob, e.aoi_threshold
        return p, th

    @classmethod
    def read_csv(cls, path) -> "AdraTable":
        entries, scores = {}, {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(cls.columns) - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"{path}: missing ADRA columns {sorted(missing)}")
            for line, row in enumerate(reader, start=2):
                try:
                    n = int(row["n"])
                    entries[n] = AdraParams(float(row["access_prob"]), float(row["aoi_threshold"]))
                    if row.get("mean_aoi"):
                        scores[n] = float(row["mean_aoi"])
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"{path}:{line}: {exc}") from None
        return cls(entries, scores)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns + (("mean_aoi",) if self.scores else ()))
            for n, e in self.entries.items():
                row = [n, repr(e.access_prob), repr(e.aoi_threshold)]
                if self.scores:
                    row.append(repr(self.scores[n]) if n in self.scores else "")
                writer.writerow(row)


DEFAULT_ADRA_TABLE = Path(__file__).with_name("data") / "adra_table.csv"


def load_default_adra_table() -> AdraTable:
    return AdraTable.read_csv(DEFAULT_ADRA_TABLE)


def adra_decide(aoi: float, n: int, table: AdraTable, rng: Stream) -> bool:
    """Transmit with probability p(n), but only once the AoI reached theta(n)."""
    entry = table[n]
    if aoi < entry.aoi_threshold:
        return False
    return rng.uniform() < entry.access_prob


def rr_schedule(active_ids, t: int):
    """Round-robin genie: the user allowed to transmit in slot ``t``, or None."""
    ids = list(active_ids)
    if not ids:
        return None
    return ids[t % len(ids)]
