"""Comparison algorithms: BLS, Hoepman-style distributed greedy matching, and D-CF.

All three are non-spatial: every agent knows every other agent and its own
true utilities.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instances import Instance
from .matching import UNMATCHED, Matching, enumerate_stable_matchings, is_stable
from .metrics import egalitarian_cost, set_equality_cost


class NonTerminationError(RuntimeError):
    pass


@dataclass
class BaselineRun:
    algorithm: str
    rng_seed: int
    matching: Matching
    rounds_or_steps: int


def bls(instance: Instance) -> Matching:
    """Stable matching with minimum set-equality cost.

    Exhaustive stand-in for bidirectional local search: same output contract
    at desk scale. Ties go to lower egalitarian cost, then canonical order.
    """
    stable = enumerate_stable_matchings(instance)
    return min(stable, key=lambda m: (set_equality_cost(instance, m), egalitarian_cost(instance, m), m))


def edge_weights(instance: Instance) -> np.ndarray:
    """Sum of both sides' utilities; NaN where the pair is not mutually acceptable."""
    w = instance.utility_1 + instance.utility_2.T
    return np.where(instance.mutually_acceptable, w, np.nan)


def hoepman_run(instance: Instance, rng: np.random.Generator) -> BaselineRun:
    """Simulated asynchronous message passing for 1/2-approximate max-weight matching.

    Nodes are the 2n agents (side 2 offset by n). Each free node sends a
    request to its heaviest live neighbour; two nodes that requested each
    other lock. A locked node sends drop messages to its other neighbours,
    which forget the edge and retarget. Undelivered messages are delivered
    in an rng-chosen order; equal weights are ordered by an rng key.
    """
    n = instance.n_side
    w = edge_weights(instance)
    tiekey = rng.permutation(n * n).reshape(n, n)

    def key(a, b):
        i, j = (a, b - n) if a < n else (b, a - n)
        return (w[i, j], tiekey[i, j])

    nbrs = [set() for _ in range(2 * n)]
    for i in range(n):
        for j in range(n):
            if not np.isnan(w[i, j]):
                nbrs[i].add(n + j)
                nbrs[n + j].add(i)

    mate = [None] * (2 * n)
    target = [None] * (2 * n)
    got_request = [set() for _ in range(2 * n)]
    inbox: list[tuple[str, int, int]] = []

    def retarget(v):
        if nbrs[v]:
            target[v] = max(nbrs[v], key=lambda u: key(v, u))
            inbox.append(("req", v, target[v]))
        else:
            target[v] = None

    for v in range(2 * n):
        retarget(v)

    delivered = 0
    while inbox:
        kind, src, dst = inbox.pop(int(rng.integers(len(inbox))))
        delivered += 1
        if mate[dst] is not None:
            continue
        if kind == "req":
            got_request[dst].add(src)
            if target[dst] == src and dst in got_request[src] and mate[src] is None:
                mate[src], mate[dst] = dst, src
                for v in (src, dst):
                    for u in nbrs[v] - {mate[v]}:
                        inbox.append(("drop", v, u))
        else:  # drop
            nbrs[dst].discard(src)
            if target[dst] == src:
                retarget(dst)

    pairs = [(v, mate[v] - n) for v in range(n) if mate[v] is not None]
    return BaselineRun("HA", 0, Matching.from_pairs(n, pairs), delivered)


def hoepman(instance: Instance, rng: np.random.Generator) -> Matching:
    return hoepman_run(instance, rng).matching


def dcf_run(instance: Instance, rng: np.random.Generator) -> BaselineRun:
    """Decentralized deferred-acceptance rounds.

    Every round visits all agents in a fresh random order. A visited agent
    proposes to the best acceptable partner it strictly prefers to its
    current one and who would accept (free, or strictly prefers the
    proposer to its tentative partner). Accepting breaks both old pairs.
    Stops after a round with no change, which can only happen at a stable
    matching.
    """
    n = instance.n_side
    # util[a, b] for agents on one combined index space; side 2 offset by n
    util = np.full((2 * n, 2 * n), -np.inf)
    util[:n, n:] = np.where(instance.acceptable_1, instance.utility_1, -np.inf)
    util[n:, :n] = np.where(instance.acceptable_2, instance.utility_2, -np.inf)
    # proposal lists: best-first, ties by index
    lists = []
    for a in range(2 * n):
        cand = [b for b in range(2 * n) if np.isfinite(util[a, b])]
        cand.sort(key=lambda b: (-util[a, b], b))
        lists.append(cand)

    mate = [None] * (2 * n)

    def cur(a):
        return -np.inf if mate[a] is None else util[a, mate[a]]

    cap = 10 * n * n
    rounds = 0
    while True:
        if rounds >= cap:
            raise NonTerminationError(f"D-CF exceeded {cap} rounds")
        rounds += 1
        changed = False
        for a in rng.permutation(2 * n):
            a = int(a)
            for b in lists[a]:
                if util[a, b] <= cur(a):
                    break
                if mate[b] == a or util[b, a] <= cur(b):
                    continue
                for x in (a, b):
                    if mate[x] is not None:
                        mate[mate[x]] = None
                mate[a], mate[b] = b, a
                changed = True
                break
        if not changed:
            break

    pairs = [(a, mate[a] - n) for a in range(n) if mate[a] is not None]
    m = Matching.from_pairs(n, pairs)
    if not is_stable(instance, m):
        raise AssertionError("D-CF terminated at an unstable matching")
    return BaselineRun("DCF", 0, m, rounds)


def dcf(instance: Instance, rng: np.random.Generator) -> Matching:
    return dcf_run(instance, rng).matching
