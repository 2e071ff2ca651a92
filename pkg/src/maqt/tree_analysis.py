"""Mean-AoI analysis of settled policy trees.

A settled tree is a full binary tree whose leaves are the users' schedules, so
it is fully described (for AoI purposes) by the multiset of leaf levels. Kraft
checks are done in integers scaled by ``2**height``; only the final AoI value
is converted to float.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache


class InvalidRealization(ValueError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True)
class SettledRealization:
    leaf_levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(sorted(self.leaf_levels))
        object.__setattr__(self, "leaf_levels", levels)
        if not levels:
            raise InvalidRealization("a settled tree has at least one leaf")
        if levels[0] < 0:
            raise InvalidRealization("levels must be non-negative")
        h = levels[-1]
        if sum(1 << (h - l) for l in levels) != 1 << h:
            raise InvalidRealization(f"levels {levels} violate the Kraft equality")

    @property
    def n(self) -> int:
        return len(self.leaf_levels)

    @property
    def height(self) -> int:
        return self.leaf_levels[-1]

    @property
    def min_level(self) -> int:
        return self.leaf_levels[0]

    def is_balanced(self) -> bool:
        return self.height - self.min_level <= 1


def _as_levels(r) -> tuple[int, ...]:
    if isinstance(r, SettledRealization):
        return r.leaf_levels
    return SettledRealization(tuple(r)).leaf_levels


def mean_user_aoi(level: int) -> float:
    """Time-average AoI of a user holding a leaf at ``level``: (2**l + 1) / 2."""
    if level < 0:
        raise ValueError("level must be non-negative")
    return ((1 << level) + 1) / 2


def mean_network_aoi_exact(r) -> Fraction:
    levels = _as_levels(r)
    return Fraction(1, 2) * (1 + Fraction(sum(1 << l for l in levels), len(levels)))


def mean_network_aoi(r) -> float:
    """Average over the active users of their settled mean AoI."""
    return float(mean_network_aoi_exact(r))


def _check_feasible(n: int, depth: int):
    if n < 1:
        raise InfeasibleError("need at least one user")
    if depth < 0 or n > 1 << depth:
        raise InfeasibleError(f"{n} users do not fit in a depth-{depth} tree")


@lru_cache(maxsize=None)
def _fill(n: int, capacity: int, level: int, depth: int) -> tuple[tuple[int, ...], ...]:
    """Non-decreasing level tuples (each >= level) of length n whose leaf
    weights 2**(depth - l) sum to ``capacity``."""
    if n == 0:
        return ((),) if capacity == 0 else ()
    out = []
    for l in range(level, depth + 1):
        unit = 1 << (depth - l)
        # every remaining leaf is at level >= l, so each weighs at most `unit`
        if n * unit < capacity:
            break
        if capacity - unit < n - 1:
            continue
        for rest in _fill(n - 1, capacity - unit, l, depth):
            out.append((l,) + rest)
    return tuple(out)


def enumerate_realizations(n: int, depth: int) -> list[SettledRealization]:
    """Every leaf-level multiset of an ``n``-leaf full binary tree of height <= depth."""
    _check_feasible(n, depth)
    return [SettledRealization(levels) for levels in _fill(n, 1 << depth, 0, depth)]


def _extreme(n: int, depth: int, pick) -> SettledRealization:
    return pick(enumerate_realizations(n, depth), key=mean_network_aoi_exact)


def worst_realization(n: int, depth: int) -> SettledRealization:
    return _extreme(n, depth, max)


def best_realization(n: int, depth: int) -> SettledRealization:
    return _extreme(n, depth, min)


def worst_case_aoi(n: int, depth: int) -> float:
    return mean_network_aoi(worst_realization(n, depth))


def best_case_aoi(n: int, depth: int) -> float:
    return mean_network_aoi(best_realization(n, depth))


def min_depth(n: int) -> int:
    """ceil(log2 n): the shallowest tree with a leaf for every user."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n - 1).bit_length()


recommend_depth = min_depth


def balanced_realization(n: int) -> SettledRealization:
    h = min_depth(n)
    shallow = (1 << h) - n
    return SettledRealization((h - 1,) * shallow + (h,) * (n - shallow))


def balance_delta_exact(l_max: int, l_min: int, n: int) -> Fraction:
    if not l_max > l_min >= 1:
        raise ValueError("need l_max > l_min >= 1")
    return Fraction(3, 2 * n) * ((1 << (l_max - 1)) - (1 << l_min))


def balance_delta(l_max: int, l_min: int, n: int) -> float:
    """AoI saved by moving the deepest sibling pair under a leaf at ``l_min``."""
    return float(balance_delta_exact(l_max, l_min, n))


def balance_move(r, l_min: int | None = None) -> SettledRealization:
    """Drop the sibling pair at the deepest level and split a leaf at ``l_min``.

    The parent of the removed pair becomes a leaf one level up; the split leaf
    is replaced by two leaves one level down. ``l_min`` defaults to the
    shallowest level present.
    """
    levels = list(_as_levels(r))
    h = levels[-1]
    if l_min is None:
        l_min = levels[0]
    if levels.count(h) < 2 or l_min not in levels or l_min >= h:
        raise ValueError(f"no balancing move with l_min={l_min} on {tuple(levels)}")
    levels.remove(h)
    levels.remove(h)
    levels.remove(l_min)
    levels += [h - 1, l_min + 1, l_min + 1]
    return SettledRealization(tuple(levels))


def skew_realization(n: int) -> SettledRealization:
    if n < 2:
        raise ValueError("n must be >= 2")
    return SettledRealization(tuple(range(1, n - 1)) + (n - 1, n - 1))


def skew_bound(n: int) -> float:
    """Mean network AoI of the fully skewed tree {1, ..., n-2, n-1, n-1}."""
    if n < 2:
        raise ValueError("n must be >= 2")
    return float(Fraction(1, 2) * (1 + Fraction(3 * (1 << (n - 1)) - 2, n)))


def bounds_table(n_values, depths):
    """Rows ``(n, J, best, worst, skew)`` for every feasible pair; skew is None
    unless the depth admits the fully skewed tree (J >= n - 1)."""
    rows = []
    for n in n_values:
        for j in depths:
            if n > 1 << j:
                continue
            skew = skew_bound(n) if n >= 2 and j >= n - 1 else None
            rows.append((n, j, best_case_aoi(n, j), worst_case_aoi(n, j), skew))
    return rows
