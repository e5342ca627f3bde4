"""Candidate back-door adjustment cluster sets from a cluster CPDAG.

Possible parent sets of the sensitive cluster are enumerated from its
undirected neighbourhood, completed with the queue-based propagation over
connection marks, and the cluster partition is refined whenever completion
cannot certify a candidate.
"""
from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field

from .equivalence import (
    DEFAULT_CAPACITY,
    ClusterCpdag,
    build_cluster_cpdag,
    definite_descendants,
    enumerate_cluster_mec,
    possible_descendants,
)
from .graphs import ArcState, ClusterPartition, VariableDag, _reach, build_cluster_dag

logger = logging.getLogger(__name__)

PARENTS_ONLY = "parents-only"
COMPLETED = "completed"
FAILED = "failed"


@dataclass(frozen=True)
class Candidate:
    clusters: frozenset[int]
    status: str = PARENTS_ONLY

    def to_dict(self, partition: ClusterPartition | None = None) -> dict:
        doc = {"clusters": sorted(self.clusters), "status": self.status}
        if partition is not None:
            doc["variables"] = sorted(partition.variables(self.clusters))
        return doc


@dataclass(frozen=True)
class AdjustmentFamily:
    candidates: tuple[Candidate, ...]
    refinement_rounds: int = 0
    partition: ClusterPartition | None = field(default=None, compare=False)
    cpdag: ClusterCpdag | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("an adjustment family has at least one candidate")

    @property
    def M(self) -> int:
        return len(self.candidates)

    @property
    def completed(self) -> tuple[Candidate, ...]:
        return tuple(c for c in self.candidates if c.status != FAILED)

    def variable_sets(self) -> list[list[int]]:
        """Variable ids of every usable candidate, in candidate order."""
        if self.partition is None:
            raise ValueError("family carries no partition")
        return [sorted(self.partition.variables(c.clusters)) for c in self.completed]

    def to_dict(self) -> dict:
        return {
            "candidates": [c.to_dict(self.partition) for c in self.candidates],
            "M": self.M,
            "refinement_rounds": self.refinement_rounds,
            "partition": None if self.partition is None else self.partition.to_dict(),
        }


def enumerate_possible_parent_sets(g: ClusterCpdag, a: int) -> list[frozenset[int]]:
    """Subsets of ``sib(a)`` that some orientation could make parents of ``a``.

    A missing arc between two non-adjacent siblings imposes no collider
    restriction, just like a never arc.
    """
    siblings = sorted(g.siblings[a])
    directed_children = g.children
    reach = {v: _reach([v], directed_children) for v in siblings}
    out = []
    for size in range(len(siblings) + 1):
        for s in itertools.combinations(siblings, size):
            ok = True
            for u, v in itertools.combinations(s, 2):
                if v in g.neighbors[u]:
                    continue
                arc = g.arc(u, a, v)
                if arc is not None and arc.state is not ArcState.NEVER:
                    ok = False
                    break
            if ok:
                rest = [v for v in siblings if v not in s]
                ok = not any(u in reach[v] for u in s for v in rest)
            if ok:
                out.append(frozenset(s))
    return out


def adjustment_candidates(g: ClusterCpdag, a: int) -> AdjustmentFamily:
    parents = g.parents[a]
    candidates = tuple(Candidate(frozenset(parents | s)) for s in enumerate_possible_parent_sets(g, a))
    return AdjustmentFamily(candidates, 0, g.partition, g)


def complete_adjustment_set(z, a: int, g: ClusterCpdag, *, never_adds: bool = True,
                            protected=()) -> frozenset[int] | None:
    """Queue-based completion of a candidate set; returns None on FAIL.

    ``protected`` clusters (the intervened ones) are never added to the set.
    """
    z = set(z)
    protected = set(protected) | {a}
    marked = set()
    for arc in g.arcs:
        marked |= arc.connection_marks
    queue = deque(
        (p, q) for p in sorted(z & marked) for q in sorted(g.neighbors[p]) if q != a
    )
    processed = set()
    while queue:
        p, q = queue.popleft()
        if (p, q) in processed or q in protected:
            continue
        processed.add((p, q))
        for r in sorted(g.neighbors[q] - {p}):
            arc = g.arc(p, q, r)
            if arc is None:
                continue
            if arc.state is ArcState.MARG:
                z.add(q)
            elif arc.state is ArcState.NEVER:
                if never_adds:
                    z.add(q)
                if z & arc.connection_marks:
                    queue.append((q, r))
            elif z & possible_descendants(g, q) and not (z & arc.separation_marks):
                return None
    return frozenset(z)


def _complete_family(g: ClusterCpdag, a: int, protected, never_adds: bool) -> list[Candidate]:
    out = []
    for cand in adjustment_candidates(g, a).candidates:
        done = complete_adjustment_set(cand.clusters, a, g, never_adds=never_adds, protected=protected)
        if done is None:
            out.append(Candidate(cand.clusters, FAILED))
        else:
            out.append(Candidate(done, COMPLETED))
    return out


def _dedupe(cands) -> tuple[Candidate, ...]:
    seen = {}
    for c in cands:
        seen.setdefault((tuple(sorted(c.clusters)), c.status), c)
    return tuple(seen[k] for k in sorted(seen))


def _split(partition: ClusterPartition, targets: set[int]) -> ClusterPartition:
    """Break ``targets`` into singletons; roles follow their clusters."""
    kept, singles = [], []
    remap = {}
    for i, c in enumerate(partition.clusters):
        if i in targets and len(c) > 1:
            singles.extend(frozenset([v]) for v in sorted(c))
        else:
            remap[i] = len(kept)
            kept.append(c)
    return ClusterPartition(
        tuple(kept + singles),
        sensitive=None if partition.sensitive is None else remap[partition.sensitive],
        admissible=None if partition.admissible is None else remap[partition.admissible],
    )


def _family_for(g: ClusterCpdag, partition: ClusterPartition, never_adds: bool) -> list[Candidate]:
    a, xad = partition.sensitive, partition.admissible
    protected = {a} if xad is None else {a, xad}
    fam = _complete_family(g, a, protected, never_adds)
    if xad is None:
        return fam
    fam_x = _complete_family(g, xad, protected, never_adds)
    merged = []
    for ca, cx in itertools.product(fam, fam_x):
        status = FAILED if FAILED in (ca.status, cx.status) else COMPLETED
        merged.append(Candidate((ca.clusters | cx.clusters) - protected, status))
    return merged


def enumerate_adjustment_sets(dag: VariableDag, partition: ClusterPartition, *,
                              capacity: int = DEFAULT_CAPACITY,
                              never_adds: bool = True) -> AdjustmentFamily:
    """Full pipeline from a variable DAG to completed candidate sets.

    Any FAIL triggers a refinement round: clusters named in connection marks
    become singletons.  When that changes nothing, every remaining multi-variable
    cluster other than the intervened ones is split.  Candidates still failing
    at variable level are kept with status ``failed``.
    """
    if partition.sensitive is None:
        raise ValueError("partition needs a sensitive cluster")
    part = partition
    rounds = 0
    while True:
        cpdag = build_cluster_cpdag(enumerate_cluster_mec(build_cluster_dag(dag, part), capacity))
        cands = _family_for(cpdag, part, never_adds)
        if all(c.status != FAILED for c in cands):
            break
        protected = {part.sensitive, part.admissible} - {None}
        marked = set()
        for arc in cpdag.arcs:
            marked |= arc.connection_marks
        targets = {c for c in marked - protected if len(part.clusters[c]) > 1}
        if not targets:
            targets = {c for c in range(part.n_clusters)
                       if c not in protected and len(part.clusters[c]) > 1}
        if not targets:
            logger.warning("completion still fails at variable level; keeping failed candidates")
            break
        part = _split(part, targets)
        rounds += 1

    a = part.sensitive
    risky = definite_descendants(cpdag, a)
    for c in cands:
        if c.clusters & risky:
            logger.warning("candidate %s contains definite descendants of the sensitive cluster",
                           sorted(c.clusters))
    return AdjustmentFamily(_dedupe(cands), rounds, part, cpdag)
