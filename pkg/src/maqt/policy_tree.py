"""Schedule algebra for the binary policy tree and the per-schedule weight table.

A schedule ``(offset, level)`` prescribes a transmission in every slot ``t``
with ``t mod 2**level == offset``. Schedules are stored in heap order, position
``2**level + offset - 1``, so a depth-``J`` tree is a flat array of
``2**(J+1) - 1`` weights and parent/child arithmetic is integer-only.

The ``_``-prefixed numba kernels below are shared by the Python-level API and
the slot simulator; random draws are consumed in a fixed order (heap order for
whole-table draws, root-to-leaf for the active path).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .rng import Stream, fill_uniform, uniform_at


class NoChildrenError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    offset: int
    level: int

    def __post_init__(self):
        if self.level < 0 or not 0 <= self.offset < (1 << self.level):
            raise ValueError(f"invalid schedule (offset={self.offset}, level={self.level})")

    @property
    def period(self) -> int:
        return 1 << self.level

    @property
    def index(self) -> int:
        return (1 << self.level) + self.offset - 1

    @classmethod
    def from_index(cls, index: int) -> "Schedule":
        index = int(index)
        level = (index + 1).bit_length() - 1
        return cls(index + 1 - (1 << level), level)

    def parent(self) -> "Schedule":
        if self.level == 0:
            raise ValueError("the root has no parent")
        return Schedule(self.offset % (self.period >> 1), self.level - 1)

    def __repr__(self):
        return f"({self.offset},{self.period})"


ROOT = Schedule(0, 0)


def table_size(depth: int) -> int:
    return (1 << (depth + 1)) - 1


def all_schedules(depth: int) -> list[Schedule]:
    return [Schedule.from_index(i) for i in range(table_size(depth))]


def prescribes(s: Schedule, t: int) -> bool:
    if t < 0:
        raise ValueError("slot counter must be non-negative")
    return t % s.period == s.offset


def children(s: Schedule, depth: int) -> tuple[Schedule, Schedule]:
    if s.level >= depth:
        raise NoChildrenError(f"{s!r} is a leaf of the depth-{depth} tree")
    return Schedule(s.offset, s.level + 1), Schedule(s.offset + s.period, s.level + 1)


def is_ancestor(a: Schedule, b: Schedule) -> bool:
    """True if ``a`` is ``b`` or lies on the path from the root to ``b``."""
    return a.level <= b.level and b.offset % a.period == a.offset


def conflicts(a: Schedule, b: Schedule) -> bool:
    # Two periodic slot sets intersect iff one schedule is an ancestor of the other.
    return is_ancestor(a, b) or is_ancestor(b, a)


def active_set(t: int, depth: int) -> list[Schedule]:
    """The ``depth + 1`` schedules that prescribe slot ``t``, root first."""
    if t < 0:
        raise ValueError("slot counter must be non-negative")
    return [Schedule(t % (1 << l), l) for l in range(depth + 1)]


@dataclass(frozen=True)
class AgentParams:
    """Learning parameters of the tree-based agents.

    ``eta`` and ``epsilon`` are only read by ALOHA-QT; mAQT selects a single
    schedule and never relinquishes.
    """

    eta: float = 0.95
    epsilon: float = 0.02
    alpha_plus: float = 0.2
    alpha_minus: float = -0.5
    gamma0: float = 0.1
    gamma1: float = 1.8
    w_init: float = 0.25

    def __post_init__(self):
        checks = [
            (0 < self.eta < 1, "eta must lie in (0, 1)"),
            (0 <= self.epsilon < 1, "epsilon must lie in [0, 1)"),
            (self.alpha_plus > 0, "alpha_plus must be positive"),
            (self.alpha_minus < 0, "alpha_minus must be negative"),
            (0 <= self.gamma0 <= 1, "gamma0 must lie in [0, 1]"),
            (self.gamma1 >= 1, "gamma1 must be >= 1"),
            (0 < self.w_init <= 1, "w_init must lie in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


# Default learning parameters. Both tree variants share the learning rates and initialization.
ALOHA_QT_PARAMS = AgentParams()
MAQT_PARAMS = AgentParams()


@dataclass
class WeightTable:
    depth: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (table_size(self.depth),):
            raise ValueError(
                f"a depth-{self.depth} table needs {table_size(self.depth)} weights, "
                f"got shape {self.weights.shape}"
            )

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, s: Schedule) -> float:
        return float(self.weights[s.index])

    def total(self) -> float:
        return float(self.weights.sum())

    def argmax(self) -> Schedule:
        # np.argmax returns the first maximum, i.e. lowest level then lowest offset.
        return Schedule.from_index(int(np.argmax(self.weights)))

    def copy(self) -> "WeightTable":
        return WeightTable(self.depth, self.weights.copy())

    def items(self):
        for i, w in enumerate(self.weights):
            yield Schedule.from_index(i), float(w)


# --- numba kernels -----------------------------------------------------------


@njit(cache=True, nogil=True)
def _active_indices(t, depth, out):
    for l in range(depth + 1):
        p = 1 << l
        out[l] = p - 1 + (t & (p - 1))


@njit(cache=True, nogil=True)
def _schedule_fires(index, t):
    level = 0
    while (2 << level) <= index + 1:
        level += 1
    p = 1 << level
    return (t & (p - 1)) == index + 1 - p


@njit(cache=True, nogil=True)
def _init_weights(w, depth, w_init, gamma0, gamma1, key, counter):
    i = 0
    for l in range(depth + 1):
        scale = w_init / gamma1 ** l
        for _ in range(1 << l):
            u = uniform_at(key, counter)
            counter += 1
            w[i] = scale * (1.0 - gamma0 + gamma0 * u)
            i += 1
    return counter


@njit(cache=True, nogil=True)
def _multiplicative_update(w, idx, alpha, key, counter):
    """Scale the active weights by exp(alpha * U); return (counter, change in sum)."""
    change = 0.0
    for j in range(idx.shape[0]):
        i = idx[j]
        old = w[i]
        w[i] = old * np.exp(alpha * uniform_at(key, counter))
        counter += 1
        change += w[i] - old
    return counter, change


@njit(cache=True, nogil=True)
def _redistribute(w, delta, key, counter):
    n = w.shape[0]
    xs = np.empty(n)
    counter = fill_uniform(key, counter, xs)
    scale = delta / xs.sum()
    for i in range(n):
        w[i] += scale * xs[i]
    return counter


@njit(cache=True, nogil=True)
def _clamp_and_sum(w):
    s = 0.0
    for i in range(w.shape[0]):
        if w[i] > 1.0:
            w[i] = 1.0
        s += w[i]
    return s


@njit(cache=True, nogil=True)
def _argmax_first(w):
    best = 0
    for i in range(1, w.shape[0]):
        if w[i] > w[best]:
            best = i
    return best


# --- value-semantics API -----------------------------------------------------


def init_weights(depth: int, params: AgentParams, rng: Stream) -> WeightTable:
    w = np.empty(table_size(depth))
    rng.counter = int(
        _init_weights(w, depth, params.w_init, params.gamma0, params.gamma1,
                      np.uint64(rng.key), rng.counter)
    )
    return WeightTable(depth, w)


def _indices(actives) -> np.ndarray:
    return np.array([s.index for s in actives], dtype=np.int64)


def multiplicative_update(table: WeightTable, actives: list[Schedule], alpha: float,
                          rng: Stream) -> WeightTable:
    out = table.copy()
    counter, _ = _multiplicative_update(out.weights, _indices(actives), float(alpha),
                                        np.uint64(rng.key), rng.counter)
    rng.counter = int(counter)
    return out


def normalize_weights(w_before_sum: float, table: WeightTable, w_init: float,
                      rng: Stream) -> WeightTable:
    """Hand weight lost since the start of the slot back to every schedule.

    Fires only when the sum dropped (``delta > 0``) and the current sum is below
    ``w_init * |S|``; the lost mass is split with i.i.d. uniform proportions.
    """
    current = table.total()
    delta = w_before_sum - current
    if not (delta > 0 and current < w_init * len(table)):
        return table.copy()
    out = table.copy()
    rng.counter = int(_redistribute(out.weights, delta, np.uint64(rng.key), rng.counter))
    return out


def enforce_bounds(table: WeightTable) -> WeightTable:
    return WeightTable(table.depth, np.minimum(table.weights, 1.0))
