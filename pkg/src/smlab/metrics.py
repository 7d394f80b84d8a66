"""Outcome-quality measures: instability (DoI, RoI, MD), fairness costs, and median-match statistics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .instances import Instance, full_ranks
from .matching import (
    UNMATCHED,
    Matching,
    enumerate_stable_matchings,
    find_blocking_pairs,
    median_stable_matching,
    stable_partner_lists,
)


@dataclass
class OutcomeMetrics:
    stable: bool
    doi: int
    roi: float
    md: float
    regret: Optional[int]
    egalitarian: int
    set_equality: int
    is_msm: Optional[bool]
    mm_fraction: float
    n_stable: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def degree_of_instability(instance: Instance, matching: Matching, blocking=None) -> int:
    """Number of distinct agents that belong to at least one blocking pair."""
    if blocking is None:
        blocking = find_blocking_pairs(instance, matching)
    return len({i for i, _ in blocking}) + len({j for _, j in blocking})


def ratio_of_instability(instance: Instance, matching: Matching, blocking=None) -> float:
    """Blocking pairs divided by n_side squared."""
    if blocking is None:
        blocking = find_blocking_pairs(instance, matching)
    return len(blocking) / instance.n_side**2


def max_dissatisfaction(instance: Instance, matching: Matching, blocking=None) -> float:
    """Largest utility gain any blocking agent would get from its blocking partner.

    An unmatched agent's current utility counts as 0.
    """
    if blocking is None:
        blocking = find_blocking_pairs(instance, matching)
    u1, u2 = instance.utility_1, instance.utility_2
    p1, p2 = matching.partner_of_1, matching.partner_of_2
    best = 0.0
    for i, j in blocking:
        cur_i = 0.0 if p1[i] == UNMATCHED else u1[i, p1[i]]
        cur_j = 0.0 if p2[j] == UNMATCHED else u2[j, p2[j]]
        best = max(best, u1[i, j] - cur_i, u2[j, i] - cur_j)
    return float(best)


def _rank_sums(instance: Instance, matching: Matching):
    ranks = full_ranks(instance)
    pairs = matching.pairs()
    side1 = [int(ranks.rank_1[i, j]) for i, j in pairs]
    side2 = [int(ranks.rank_2[j, i]) for i, j in pairs]
    return side1, side2


def regret_cost(instance: Instance, matching: Matching) -> Optional[int]:
    """Worst rank any matched agent assigns its partner; None for an empty matching."""
    side1, side2 = _rank_sums(instance, matching)
    if not side1:
        return None
    return max(max(side1), max(side2))


def egalitarian_cost(instance: Instance, matching: Matching) -> int:
    side1, side2 = _rank_sums(instance, matching)
    return sum(side1) + sum(side2)


def set_equality_cost(instance: Instance, matching: Matching) -> int:
    """Absolute difference between the two sides' rank sums."""
    side1, side2 = _rank_sums(instance, matching)
    return abs(sum(side1) - sum(side2))


def median_match_stats(
    instance: Instance, matching: Matching, stable: Optional[Sequence[Matching]] = None
) -> tuple[Optional[bool], float]:
    """(is_msm, mm_fraction) relative to the stable set.

    is_msm is None when the median stable matching is undefined. With an even
    number K of stable matchings an agent counts as median-matched when its
    partner sits at position K/2 or K/2 + 1 of its sorted stable partners.
    """
    if stable is None:
        stable = enumerate_stable_matchings(instance)
    k = len(stable)
    if k == 0:
        return None, 0.0
    msm = median_stable_matching(instance, stable)
    is_msm = None if msm is None else (msm == matching)
    if k % 2:
        window = [(k + 1) // 2 - 1]
    else:
        window = [k // 2 - 1, k // 2]
    side1, side2 = stable_partner_lists(instance, stable)
    hits = 0
    for i, lst in enumerate(side1):
        if matching.partner_of_1[i] in {lst[w] for w in window}:
            hits += 1
    for j, lst in enumerate(side2):
        if matching.partner_of_2[j] in {lst[w] for w in window}:
            hits += 1
    return is_msm, hits / (2 * instance.n_side)


def score(instance: Instance, matching: Matching, stable: Optional[Sequence[Matching]] = None) -> OutcomeMetrics:
    """Full metric suite for one outcome."""
    blocking = find_blocking_pairs(instance, matching)
    if stable is None:
        stable = enumerate_stable_matchings(instance)
    is_msm, mm = median_match_stats(instance, matching, stable)
    return OutcomeMetrics(
        stable=not blocking,
        doi=degree_of_instability(instance, matching, blocking),
        roi=ratio_of_instability(instance, matching, blocking),
        md=max_dissatisfaction(instance, matching, blocking),
        regret=regret_cost(instance, matching),
        egalitarian=egalitarian_cost(instance, matching),
        set_equality=set_equality_cost(instance, matching),
        is_msm=is_msm,
        mm_fraction=mm,
        n_stable=len(stable),
    )
