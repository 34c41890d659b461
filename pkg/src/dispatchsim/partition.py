"""Subset partitions of the AP set with pairwise-disjoint candidate sets.

A partition schedules groups of APs for round-robin action updates; two APs
may share a group only if their candidate server sets (cloud excluded) are
disjoint, so their local optimizations never touch the same edge queue.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

from .model import Topology


@dataclass(frozen=True)
class SubsetPartition:
    subsets: tuple          # ordered tuple of frozensets of AP indices

    @property
    def period(self) -> int:
        return len(self.subsets)


def _edge_servers(topo: Topology, aps) -> frozenset:
    out = set()
    for k in aps:
        out.update(m for m in topo.candidate_servers[k] if m != 0)
    return frozenset(out)


def greedy_partition(topo: Topology) -> SubsetPartition:
    """Greedy merge of singleton subsets while any two subsets stay disjoint.

    Deterministic: the subset with the fewest (but at least one) disjoint
    partners is merged with its lowest-index disjoint partner; ties go to the
    lowest index.  The all-singleton start is always a valid partition, so the
    result never has more than K subsets.
    """
    K = len(topo.candidate_servers)
    subsets = [{k} for k in range(K)]
    servers = [_edge_servers(topo, s) for s in subsets]

    while True:
        n = len(subsets)
        best = None     # (partner_count, index, partner_index)
        for a in range(n):
            partners = [b for b in range(n)
                        if b != a and not (servers[a] & servers[b])]
            if not partners:
                continue
            cand = (len(partners), a, min(partners))
            if best is None or cand[:2] < best[:2]:
                best = cand
        if best is None:
            break
        _, a, b = best
        lo, hi = min(a, b), max(a, b)
        subsets[lo] |= subsets[hi]
        servers[lo] |= servers[hi]
        del subsets[hi], servers[hi]

    return SubsetPartition(tuple(frozenset(s) for s in subsets))


def validate_partition(partition: SubsetPartition, topo: Topology):
    """Return (ok, first_violation_description)."""
    K = len(topo.candidate_servers)
    seen = set()
    for i, sub in enumerate(partition.subsets):
        if seen & sub:
            return False, f"subset {i} overlaps an earlier subset: {sorted(seen & sub)}"
        seen |= sub
    if seen != set(range(K)):
        missing = sorted(set(range(K)) - seen)
        return False, f"union of subsets misses APs {missing}"
    for i, sub in enumerate(partition.subsets):
        for a, b in combinations(sorted(sub), 2):
            shared = _edge_servers(topo, [a]) & _edge_servers(topo, [b])
            if shared:
                return False, (f"APs {a} and {b} in subset {i} share edge "
                               f"servers {sorted(shared)}")
    return True, None


def scheduled_subset(partition: SubsetPartition, t: int) -> frozenset:
    return partition.subsets[t % partition.period]


def minimal_partition_size(topo: Topology) -> int:
    """Exact minimum period by exhaustive set-partition search (small K only)."""
    K = len(topo.candidate_servers)
    if K > 8:
        raise ValueError("exhaustive search is limited to K <= 8")
    servers = [_edge_servers(topo, [k]) for k in range(K)]

    best = [K]

    def extend(k: int, groups: list):
        if len(groups) >= best[0]:
            return
        if k == K:
            best[0] = len(groups)
            return
        for g in groups:
            if all(not (servers[k] & servers[kk]) for kk in g):
                g.append(k)
                extend(k + 1, groups)
                g.pop()
        groups.append([k])
        extend(k + 1, groups)
        groups.pop()

    extend(0, [])
    return best[0]


def partition_to_json(partition: SubsetPartition) -> list:
    return [sorted(s) for s in partition.subsets]


def partition_from_json(data) -> SubsetPartition:
    if isinstance(data, str):
        data = json.loads(data)
    return SubsetPartition(tuple(frozenset(s) for s in data))
