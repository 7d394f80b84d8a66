"""Matchings, blocking pairs, Gale-Shapley, stable-set enumeration and the median stable matching.

Preferences are read straight from utilities. Agent ``a`` strictly prefers
``b`` to its current situation when ``b`` is acceptable to it and either
``a`` is unmatched, ``a``'s current partner is unacceptable, or the utility
of ``b`` is strictly larger. Requiring strict preference on both sides gives
weak stability for instances with ties.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .instances import Instance

UNMATCHED = -1
MAX_ENUM_SIDE = 8


class MatchingError(ValueError):
    """Matching is inconsistent or does not fit the instance."""


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Matching:
    partner_of_1: tuple
    partner_of_2: tuple

    def __post_init__(self):
        p1 = tuple(int(x) for x in self.partner_of_1)
        p2 = tuple(int(x) for x in self.partner_of_2)
        object.__setattr__(self, "partner_of_1", p1)
        object.__setattr__(self, "partner_of_2", p2)
        for i, j in enumerate(p1):
            if j != UNMATCHED and not (0 <= j < len(p2) and p2[j] == i):
                raise MatchingError(f"partner_of_1[{i}]={j} is not mirrored in partner_of_2")
        for j, i in enumerate(p2):
            if i != UNMATCHED and not (0 <= i < len(p1) and p1[i] == j):
                raise MatchingError(f"partner_of_2[{j}]={i} is not mirrored in partner_of_1")

    @classmethod
    def from_pairs(cls, n_side: int, pairs: Iterable[tuple[int, int]]) -> "Matching":
        p1 = [UNMATCHED] * n_side
        p2 = [UNMATCHED] * n_side
        for i, j in pairs:
            if p1[i] != UNMATCHED or p2[j] != UNMATCHED:
                raise MatchingError(f"agent appears twice in pairs (pair {(i, j)})")
            p1[i] = j
            p2[j] = i
        return cls(tuple(p1), tuple(p2))

    @classmethod
    def empty(cls, n_side: int) -> "Matching":
        return cls((UNMATCHED,) * n_side, (UNMATCHED,) * n_side)

    @property
    def n_side(self) -> int:
        return len(self.partner_of_1)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in enumerate(self.partner_of_1) if j != UNMATCHED]

    def __len__(self) -> int:
        return sum(1 for j in self.partner_of_1 if j != UNMATCHED)

    def to_dict(self) -> dict:
        return {"partner_of_1": list(self.partner_of_1), "partner_of_2": list(self.partner_of_2)}

    @classmethod
    def from_dict(cls, doc: dict) -> "Matching":
        return cls(tuple(doc["partner_of_1"]), tuple(doc["partner_of_2"]))


def _check(instance: Instance, matching: Matching) -> None:
    if len(matching.partner_of_1) != instance.n_side or len(matching.partner_of_2) != instance.n_side:
        raise MatchingError(
            f"matching has sides {len(matching.partner_of_1)}/{len(matching.partner_of_2)}, "
            f"instance has n_side={instance.n_side}"
        )


def _current_utility(utility: np.ndarray, acceptable: np.ndarray, partner: Sequence[int]) -> np.ndarray:
    """Utility of each agent's current status; -inf when unmatched or stuck with an unacceptable partner."""
    cur = np.full(len(partner), -np.inf)
    for a, b in enumerate(partner):
        if b != UNMATCHED and acceptable[a, b]:
            cur[a] = utility[a, b]
    return cur


def blocking_mask(instance: Instance, matching: Matching) -> np.ndarray:
    """Boolean [n_side, n_side] matrix; entry (i, j) is True when (i, j) blocks."""
    _check(instance, matching)
    acc1, acc2 = instance.acceptable_1, instance.acceptable_2
    cur1 = _current_utility(instance.utility_1, acc1, matching.partner_of_1)
    cur2 = _current_utility(instance.utility_2, acc2, matching.partner_of_2)
    wants1 = acc1 & (instance.utility_1 > cur1[:, None])
    wants2 = acc2 & (instance.utility_2 > cur2[:, None])
    mask = wants1 & wants2.T
    for i, j in matching.pairs():
        mask[i, j] = False
    return mask


def find_blocking_pairs(instance: Instance, matching: Matching) -> list[tuple[int, int]]:
    mask = blocking_mask(instance, matching)
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(mask))]


def is_stable(instance: Instance, matching: Matching) -> bool:
    return not blocking_mask(instance, matching).any()


def _gs(prop_u, prop_acc, recv_u, recv_acc):
    """Proposer-side deferred acceptance on generic matrices; returns proposer->receiver array."""
    n = prop_u.shape[0]
    # proposers walk their list in (utility desc, index asc) order
    lists = []
    for p in range(n):
        cand = [r for r in range(n) if prop_acc[p, r]]
        cand.sort(key=lambda r: (-prop_u[p, r], r))
        lists.append(cand)
    nxt = [0] * n
    held = [UNMATCHED] * n  # receiver -> proposer
    free = list(range(n - 1, -1, -1))
    while free:
        p = free.pop()
        while nxt[p] < len(lists[p]):
            r = lists[p][nxt[p]]
            nxt[p] += 1
            if not recv_acc[r, p]:
                continue
            cur = held[r]
            if cur == UNMATCHED:
                held[r] = p
                break
            # incumbent keeps ties
            if recv_u[r, p] > recv_u[r, cur]:
                held[r] = p
                free.append(cur)
                break
    out = [UNMATCHED] * n
    for r, p in enumerate(held):
        if p != UNMATCHED:
            out[p] = r
    return out


def gale_shapley(instance: Instance, proposing_side: int = 1) -> Matching:
    """Deferred acceptance with side 1 or side 2 proposing."""
    n = instance.n_side
    if proposing_side == 1:
        p1 = _gs(instance.utility_1, instance.acceptable_1, instance.utility_2, instance.acceptable_2)
        return Matching.from_pairs(n, [(i, j) for i, j in enumerate(p1) if j != UNMATCHED])
    if proposing_side == 2:
        p2 = _gs(instance.utility_2, instance.acceptable_2, instance.utility_1, instance.acceptable_1)
        return Matching.from_pairs(n, [(i, j) for j, i in enumerate(p2) if i != UNMATCHED])
    raise ValueError(f"proposing_side must be 1 or 2, got {proposing_side}")


def enumerate_stable_matchings(instance: Instance) -> list[Matching]:
    """All (weakly) stable matchings by exhaustive backtracking.

    Side-1 agents are assigned in index order to a mutually acceptable free
    partner or left unmatched. A pair is checked as soon as the status of both
    endpoints is final, which prunes most of the tree; pairs involving a
    side-2 agent that stays unmatched are checked at the leaves.
    """
    n = instance.n_side
    if n > MAX_ENUM_SIDE:
        raise EnumerationTooLarge(f"enumeration limited to n_side <= {MAX_ENUM_SIDE}, got {n}")
    u1, u2 = instance.utility_1, instance.utility_2
    acc1, acc2 = instance.acceptable_1, instance.acceptable_2
    mutual = instance.mutually_acceptable
    # allow leaving a side-1 agent single only when lists are incomplete
    allow_single = not mutual.all()

    p1 = [UNMATCHED] * n
    p2 = [UNMATCHED] * n
    found: list[Matching] = []

    def wants1(i, j):
        cur = p1[i]
        return acc1[i, j] and (cur == UNMATCHED or u1[i, j] > u1[i, cur])

    def wants2(j, i):
        cur = p2[j]
        return acc2[j, i] and (cur == UNMATCHED or u2[j, i] > u2[j, cur])

    def consistent(i):
        # i's status is now final; check (i, j) against side-2 agents already taken
        # and (k, j_i) for earlier k against i's partner
        for j in range(n):
            if p2[j] != UNMATCHED and p1[i] != j and wants1(i, j) and wants2(j, i):
                return False
        j = p1[i]
        if j != UNMATCHED:
            for k in range(i):
                if wants1(k, j) and wants2(j, k):
                    return False
        return True

    def leaf_ok():
        for j in range(n):
            if p2[j] == UNMATCHED:
                for i in range(n):
                    if wants1(i, j) and wants2(j, i):
                        return False
        return True

    def rec(i):
        if i == n:
            if leaf_ok():
                found.append(Matching(tuple(p1), tuple(p2)))
            return
        for j in range(n):
            if p2[j] == UNMATCHED and mutual[i, j]:
                p1[i] = j
                p2[j] = i
                if consistent(i):
                    rec(i + 1)
                p1[i] = UNMATCHED
                p2[j] = UNMATCHED
        if allow_single and consistent(i):
            rec(i + 1)

    rec(0)
    return sorted(set(found))


def stable_partner_lists(instance: Instance, stable: Sequence[Matching]):
    """For each agent, its partners across ``stable`` sorted best-first.

    Returns (side1, side2): lists of lists of partner indices (with
    repetition). UNMATCHED sorts last; equal utilities sort by index.
    """
    def order(utility, a, partners):
        return sorted(partners, key=lambda b: (1, 0.0, 0) if b == UNMATCHED else (0, -utility[a, b], b))

    n = instance.n_side
    side1 = [order(instance.utility_1, i, [m.partner_of_1[i] for m in stable]) for i in range(n)]
    side2 = [order(instance.utility_2, j, [m.partner_of_2[j] for m in stable]) for j in range(n)]
    return side1, side2


def median_stable_matching(instance: Instance, stable: Optional[Sequence[Matching]] = None) -> Optional[Matching]:
    """The matching giving every agent its median stable partner, or None when undefined.

    Undefined when the number of stable matchings is even. Under ties the
    per-agent medians need not form a consistent stable matching (the
    lattice structure is lost); that case also yields None. For strict
    preferences a failure of the median property is a bug and raises.
    """
    if stable is None:
        stable = enumerate_stable_matchings(instance)
    k = len(stable)
    if k == 0 or k % 2 == 0:
        return None
    mid = (k + 1) // 2 - 1
    side1, side2 = stable_partner_lists(instance, stable)
    p1 = [lst[mid] for lst in side1]
    p2 = [lst[mid] for lst in side2]
    try:
        med = Matching(tuple(p1), tuple(p2))
    except MatchingError:
        med = None
    if med is None or not is_stable(instance, med):
        if _has_ties(instance):
            return None
        raise AssertionError("median property violated on a strict instance")
    return med


def _has_ties(instance: Instance) -> bool:
    for mat, acc in ((instance.utility_1, instance.acceptable_1), (instance.utility_2, instance.acceptable_2)):
        for r in range(mat.shape[0]):
            vals = mat[r][acc[r]]
            if np.unique(vals).size != vals.size:
                return True
    return False


def all_perfect_matchings(n_side: int):
    """Yield every perfect matching as a Matching (n_side! of them)."""
    for perm in itertools.permutations(range(n_side)):
        yield Matching.from_pairs(n_side, enumerate(perm))
