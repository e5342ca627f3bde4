"""Cluster-level d-separation, brute-force cluster MEC enumeration and CPDAGs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import CapacityError
from .graphs import (
    ArcState,
    ClusterDag,
    ClusterPartition,
    IndependenceArc,
    _reach,
    _topological_order,
    arc_key,
)

DEFAULT_CAPACITY = 12


@dataclass(frozen=True)
class ClusterCpdag:
    """Skeleton split into directed and undirected edges, plus shared arcs."""

    n_clusters: int
    directed: frozenset[tuple[int, int]]
    undirected: frozenset[tuple[int, int]]
    arcs: tuple[IndependenceArc, ...] = ()
    partition: ClusterPartition | None = field(default=None, compare=False)

    def __post_init__(self):
        directed = frozenset((int(u), int(v)) for u, v in self.directed)
        undirected = frozenset((min(u, v), max(u, v)) for u, v in self.undirected)
        if {(min(u, v), max(u, v)) for u, v in directed} & undirected:
            raise ValueError("an edge cannot be both directed and undirected")
        if _topological_order(self.n_clusters, directed) is None:
            raise ValueError("directed edges contain a cycle")
        object.__setattr__(self, "directed", directed)
        object.__setattr__(self, "undirected", undirected)
        object.__setattr__(self, "arcs", tuple(sorted(self.arcs, key=lambda a: a.triplet)))

    @cached_property
    def arc_map(self) -> dict[tuple[int, int, int], IndependenceArc]:
        return {a.triplet: a for a in self.arcs}

    def arc(self, i: int, k: int, j: int) -> IndependenceArc | None:
        return self.arc_map.get(arc_key(i, k, j))

    @cached_property
    def parents(self) -> tuple[frozenset[int], ...]:
        pa: list[set[int]] = [set() for _ in range(self.n_clusters)]
        for u, v in self.directed:
            pa[v].add(u)
        return tuple(frozenset(p) for p in pa)

    @cached_property
    def children(self) -> tuple[frozenset[int], ...]:
        ch: list[set[int]] = [set() for _ in range(self.n_clusters)]
        for u, v in self.directed:
            ch[u].add(v)
        return tuple(frozenset(c) for c in ch)

    @cached_property
    def siblings(self) -> tuple[frozenset[int], ...]:
        sib: list[set[int]] = [set() for _ in range(self.n_clusters)]
        for u, v in self.undirected:
            sib[u].add(v)
            sib[v].add(u)
        return tuple(frozenset(s) for s in sib)

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        return tuple(p | c | s for p, c, s in zip(self.parents, self.children, self.siblings))

    @cached_property
    def skeleton(self) -> frozenset[tuple[int, int]]:
        return frozenset((min(u, v), max(u, v)) for u, v in self.directed) | self.undirected

    def to_dict(self) -> dict:
        doc = {
            "nodes": list(range(self.n_clusters)),
            "edges": [list(e) for e in sorted(self.directed)],
            "undirected": [list(e) for e in sorted(self.undirected)],
            "partition": None,
            "roles": None,
            "arcs": [a.to_dict() for a in self.arcs],
        }
        if self.partition is not None:
            doc["partition"] = [sorted(c) for c in self.partition.clusters]
            doc["roles"] = list(self.partition.roles)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterCpdag":
        partition = None
        if doc.get("partition") is not None:
            partition = ClusterPartition.from_dict({"clusters": doc["partition"], "roles": doc.get("roles")})
        return cls(len(doc["nodes"]), frozenset(tuple(e) for e in doc["edges"]),
                   frozenset(tuple(e) for e in doc["undirected"]),
                   tuple(IndependenceArc.from_dict(a) for a in doc["arcs"]), partition)


@dataclass(frozen=True)
class MecFamily:
    members: tuple[ClusterDag, ...]
    generator: ClusterDag

    def __post_init__(self):
        if not self.members:
            raise ValueError("an MEC has at least one member")


def _check_cluster(g, q: int) -> None:
    if not 0 <= q < g.n_clusters:
        raise ValueError(f"unknown cluster {q}")


def possible_descendants(g: ClusterCpdag | ClusterDag, q: int) -> frozenset[int]:
    """Clusters reachable from ``q`` along directed edges or undirected edges taken outward."""
    _check_cluster(g, q)
    if isinstance(g, ClusterDag):
        return g.descendants(q)
    step = [g.children[v] | g.siblings[v] for v in range(g.n_clusters)]
    return frozenset(_reach([q], step) - {q})


def definite_descendants(g: ClusterCpdag | ClusterDag, a: int) -> frozenset[int]:
    """Clusters reachable from ``a`` along directed edges only."""
    _check_cluster(g, a)
    return frozenset(_reach([a], g.children) - {a})


# ---------------------------------------------------------------------------
# cluster d-separation


def _simple_paths(neighbors: Sequence[Iterable[int]], x: set[int], y: set[int]):
    """Simple skeleton paths from x to y whose interior avoids x and y."""
    for s in sorted(x):
        stack = [(s,)]
        while stack:
            path = stack.pop()
            for w in neighbors[path[-1]]:
                if w in path or w in x:
                    continue
                if w in y:
                    yield path + (w,)
                else:
                    stack.append(path + (w,))


def _path_blocked(path, arc_of, z: set[int], descendants: Callable[[int], frozenset[int]]) -> bool:
    on_path = set(path)
    for t in range(1, len(path) - 1):
        arc = arc_of(path[t - 1], path[t], path[t + 1])
        if arc is None:
            continue
        k = path[t]
        sep_hit = bool(arc.separation_marks & on_path)
        conn_hit = bool(arc.connection_marks & z)
        if arc.state is ArcState.MARG:
            if k in z or sep_hit:
                return True
        elif arc.state is ArcState.COND:
            if sep_hit or (k not in z and not (descendants(k) & z) and not conn_hit):
                return True
        elif not conn_hit:
            return True
    return False


def dsep_clusters(g: ClusterDag | ClusterCpdag, x: Iterable[int], y: Iterable[int],
                  z: Iterable[int] = ()) -> bool:
    """Cluster d-separation read off arcs and marks.

    On a CPDAG the descendant test for cond arcs uses possible descendants.
    """
    x, y, z = set(x), set(y), set(z)
    for c in x | y | z:
        _check_cluster(g, c)
    if x & y or x & z or y & z:
        raise ValueError("x, y and z must be pairwise disjoint")
    if isinstance(g, ClusterDag):
        descendants = g.descendants
    else:
        descendants = lambda c: possible_descendants(g, c)
    for path in _simple_paths(g.neighbors, x, y):
        if not _path_blocked(path, g.arc, z, descendants):
            return False
    return True


class _RelationModel:
    """All singleton cluster d-separation statements as boolean arrays over z-masks.

    Only cond arcs depend on the orientation (through descendant sets), so each
    path is stored as a static part plus a list of cond terms.
    """

    def __init__(self, n: int, neighbors: Sequence[Iterable[int]], arc_map: dict):
        self.n = n
        masks = np.arange(1 << n, dtype=np.int64)
        self.masks = masks
        self.pairs = list(itertools.combinations(range(n), 2))
        self.valid = {
            (u, v): (masks & ((1 << u) | (1 << v))) == 0 for u, v in self.pairs
        }
        self.static: dict[tuple[int, int], list[np.ndarray]] = {}
        self.cond_terms: dict[tuple[int, int], list[list[tuple[int, int]]]] = {}
        for u, v in self.pairs:
            statics, terms = [], []
            for path in _simple_paths(neighbors, {u}, {v}):
                blocked = np.zeros(masks.shape, dtype=bool)
                cond = []
                on_path = set(path)
                for t in range(1, len(path) - 1):
                    arc = arc_map.get(arc_key(path[t - 1], path[t], path[t + 1]))
                    if arc is None:
                        continue
                    k = path[t]
                    conn = sum(1 << c for c in arc.connection_marks)
                    sep_hit = bool(arc.separation_marks & on_path)
                    if arc.state is ArcState.MARG:
                        blocked |= sep_hit | ((masks >> k) & 1).astype(bool)
                    elif arc.state is ArcState.COND:
                        if sep_hit:
                            blocked[:] = True
                        else:
                            cond.append((k, conn))
                    else:
                        blocked |= (masks & conn) == 0
                statics.append(blocked)
                terms.append(cond)
            self.static[u, v] = statics
            self.cond_terms[u, v] = terms
        self.cond_middles = sorted({k for ts in self.cond_terms.values() for t in ts for k, _ in t})

    def relation(self, desc_masks: dict[int, int]) -> dict[tuple[int, int], np.ndarray]:
        out = {}
        for pair in self.pairs:
            sep = np.ones(self.masks.shape, dtype=bool)
            for blocked, cond in zip(self.static[pair], self.cond_terms[pair]):
                b = blocked.copy()
                for k, conn in cond:
                    b |= (self.masks & ((1 << k) | desc_masks[k] | conn)) == 0
                sep &= b
            out[pair] = sep & self.valid[pair]
        return out


def _desc_mask(n: int, children: Sequence[Iterable[int]], k: int) -> int:
    return sum(1 << c for c in _reach([k], children) - {k})


def enumerate_cluster_mec(g: ClusterDag, capacity: int = DEFAULT_CAPACITY,
                          max_members: int = 200_000) -> MecFamily:
    """All orientations of ``g``'s skeleton that keep its arcs and its relation set.

    Orientations are built by backtracking.  An unshielded triplet annotated
    marg or cond keeps the generator's collider status, never and arc-less
    triplets are left free.  Survivors are then filtered on the full set of
    singleton cluster d-separation statements.
    """
    n = g.n_clusters
    if n > capacity:
        raise CapacityError(f"{n} clusters exceed the MEC enumeration cap of {capacity}")
    skeleton = sorted(g.skeleton)
    neighbors = [set() for _ in range(n)]
    for u, v in skeleton:
        neighbors[u].add(v)
        neighbors[v].add(u)

    # Order edges breadth-first so triplet constraints bite early.
    order, seen = [], set()
    for root in range(n):
        frontier = [root]
        while frontier:
            u = frontier.pop(0)
            for v in sorted(neighbors[u]):
                e = (min(u, v), max(u, v))
                if e not in seen:
                    seen.add(e)
                    order.append(e)
                    frontier.append(v)

    constraints: dict[tuple[int, int], list[tuple[int, int, int, bool]]] = {e: [] for e in skeleton}
    for k in range(n):
        for i, j in itertools.combinations(sorted(neighbors[k]), 2):
            if j in neighbors[i]:
                continue
            arc = g.arc(i, k, j)
            if arc is None or arc.state is ArcState.NEVER:
                continue
            collider = (i, k) in g.edges and (j, k) in g.edges
            constraints[(min(i, k), max(i, k))].append((i, k, j, collider))
            constraints[(min(j, k), max(j, k))].append((i, k, j, collider))

    children: list[set[int]] = [set() for _ in range(n)]
    oriented: set[tuple[int, int]] = set()
    assigned: set[tuple[int, int]] = set()
    results: list[frozenset[tuple[int, int]]] = []

    def reaches(src: int, dst: int) -> bool:
        return dst == src or dst in _reach([src], children)

    def consistent(e) -> bool:
        for i, k, j, collider in constraints[e]:
            ei, ej = (min(i, k), max(i, k)), (min(j, k), max(j, k))
            if ei in assigned and ej in assigned:
                is_coll = (i, k) in oriented and (j, k) in oriented
                if is_coll != collider:
                    return False
        return True

    def backtrack(t: int) -> None:
        if t == len(order):
            results.append(frozenset(oriented))
            if len(results) > max_members:
                raise CapacityError("MEC enumeration exceeded max_members")
            return
        u, v = order[t]
        for a, b in ((u, v), (v, u)):
            if reaches(b, a):
                continue
            children[a].add(b)
            oriented.add((a, b))
            assigned.add((u, v))
            if consistent((u, v)):
                backtrack(t + 1)
            children[a].discard(b)
            oriented.discard((a, b))
            assigned.discard((u, v))

    backtrack(0)

    model = _RelationModel(n, neighbors, g.arc_map)
    cache: dict[tuple[int, ...], bool] = {}

    def signature(edges) -> tuple[int, ...]:
        ch = [set() for _ in range(n)]
        for a, b in edges:
            ch[a].add(b)
        return tuple(_desc_mask(n, ch, k) for k in model.cond_middles)

    gen_sig = signature(g.edges)
    gen_rel = model.relation(dict(zip(model.cond_middles, gen_sig)))
    members = []
    for edges in results:
        sig = signature(edges)
        if sig not in cache:
            rel = model.relation(dict(zip(model.cond_middles, sig)))
            cache[sig] = all(np.array_equal(rel[p], gen_rel[p]) for p in model.pairs)
        if cache[sig]:
            members.append(g.with_edges(edges))
    members.sort(key=lambda m: sorted(m.edges))
    if g not in members:
        raise AssertionError("generator missing from its own MEC")
    return MecFamily(tuple(members), g)


def build_cluster_cpdag(mec: MecFamily) -> ClusterCpdag:
    if not mec.members:
        raise ValueError("empty MEC")
    first = mec.members[0]
    directed = set(first.edges)
    for m in mec.members[1:]:
        directed &= m.edges
    skeleton = first.skeleton
    undirected = {e for e in skeleton if e not in {(min(u, v), max(u, v)) for u, v in directed}}
    shared = set(first.arc_map)
    for m in mec.members[1:]:
        shared &= set(m.arc_map)
    arcs = tuple(mec.generator.arc_map[k] for k in sorted(shared) if k in mec.generator.arc_map)
    return ClusterCpdag(first.n_clusters, frozenset(directed), frozenset(undirected), arcs,
                        mec.generator.partition)
