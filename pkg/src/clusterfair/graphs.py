"""Variable-level DAGs, cluster partitions and annotated cluster DAGs.

A cluster DAG is the projection of a variable DAG onto a partition of its
nodes.  Every unshielded (or manipulated-unshielded) cluster triplet carries an
independence arc whose state records how the hidden intra-cluster structure
behaves, plus optional connection and separation marks for the exceptions.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Iterator, Sequence

from .exceptions import AdmissibilityError

CONTINUOUS = "continuous"
BINARY = "binary"
NODE_KINDS = (CONTINUOUS, BINARY)

SENSITIVE = "sensitive"
ADMISSIBLE = "admissible"
PLAIN = "plain"


def _topological_order(n: int, edges: Iterable[tuple[int, int]]) -> list[int] | None:
    """Kahn's algorithm with smallest-id tie-break; None when a cycle exists."""
    children: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for u, v in edges:
        children[u].append(v)
        indeg[v] += 1
    ready = [v for v in range(n) if indeg[v] == 0]
    order = []
    while ready:
        ready.sort(reverse=True)
        u = ready.pop()
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order if len(order) == n else None


def _reach(start: Iterable[int], step: Sequence[Iterable[int]]) -> set[int]:
    seen: set[int] = set()
    stack = list(start)
    while stack:
        u = stack.pop()
        for v in step[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


@dataclass(frozen=True)
class VariableDag:
    """Directed acyclic graph over variables ``0 .. n_nodes-1``."""

    n_nodes: int
    edges: tuple[tuple[int, int], ...] = ()
    kinds: tuple[str, ...] | None = None

    def __post_init__(self):
        n = int(self.n_nodes)
        if n < 0:
            raise ValueError("n_nodes must be non-negative")
        raw = [(int(u), int(v)) for u, v in self.edges]
        edges = tuple(sorted(set(raw)))
        if len(edges) != len(raw):
            raise ValueError("duplicate edges")
        for u, v in edges:
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u}, {v}) references an unknown node")
        kinds = tuple(self.kinds) if self.kinds is not None else (CONTINUOUS,) * n
        if len(kinds) != n or any(k not in NODE_KINDS for k in kinds):
            raise ValueError("kinds must give 'continuous' or 'binary' for every node")
        if _topological_order(n, edges) is None:
            raise ValueError("edges contain a directed cycle")
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "kinds", kinds)

    @cached_property
    def parents(self) -> tuple[frozenset[int], ...]:
        pa: list[set[int]] = [set() for _ in range(self.n_nodes)]
        for u, v in self.edges:
            pa[v].add(u)
        return tuple(frozenset(p) for p in pa)

    @cached_property
    def children(self) -> tuple[frozenset[int], ...]:
        ch: list[set[int]] = [set() for _ in range(self.n_nodes)]
        for u, v in self.edges:
            ch[u].add(v)
        return tuple(frozenset(c) for c in ch)

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        return tuple(p | c for p, c in zip(self.parents, self.children))

    @cached_property
    def topological_order(self) -> tuple[int, ...]:
        return tuple(_topological_order(self.n_nodes, self.edges))

    @cached_property
    def _descendants(self) -> tuple[frozenset[int], ...]:
        return tuple(frozenset(_reach([v], self.children)) for v in range(self.n_nodes))

    def descendants(self, v: int) -> frozenset[int]:
        """Strict descendants of ``v``."""
        return self._descendants[v]

    def ancestors(self, nodes: Iterable[int]) -> set[int]:
        """Ancestors of ``nodes``, the nodes themselves included."""
        nodes = set(nodes)
        return nodes | _reach(nodes, self.parents)

    def without_edges_between(self, left: Iterable[int], right: Iterable[int]) -> "VariableDag":
        left, right = set(left), set(right)
        kept = tuple(
            (u, v) for u, v in self.edges
            if not ((u in left and v in right) or (u in right and v in left))
        )
        return VariableDag(self.n_nodes, kept, self.kinds)

    def to_dict(self) -> dict:
        return {"nodes": self.n_nodes, "edges": [list(e) for e in self.edges],
                "kinds": list(self.kinds)}

    @classmethod
    def from_dict(cls, doc: dict) -> "VariableDag":
        return cls(doc["nodes"], tuple(tuple(e) for e in doc["edges"]), tuple(doc["kinds"]))


@dataclass(frozen=True)
class ClusterPartition:
    """Ordered partition of variables; cluster ids are positions in ``clusters``.

    ``sensitive`` and ``admissible`` hold the cluster ids carrying those roles.
    The prediction target lives outside the variable DAG, so no cluster here
    plays the target role.
    """

    clusters: tuple[frozenset[int], ...]
    sensitive: int | None = None
    admissible: int | None = None

    def __post_init__(self):
        clusters = tuple(frozenset(int(v) for v in c) for c in self.clusters)
        seen: set[int] = set()
        for c in clusters:
            if not c:
                raise ValueError("clusters must be nonempty")
            if seen & c:
                raise ValueError("clusters must be disjoint")
            seen |= c
        object.__setattr__(self, "clusters", clusters)
        for role in (self.sensitive, self.admissible):
            if role is not None and not 0 <= role < len(clusters):
                raise ValueError(f"role references unknown cluster {role}")
        if self.sensitive is not None and self.sensitive == self.admissible:
            raise ValueError("sensitive and admissible clusters must differ")

    @classmethod
    def singletons(cls, n: int, **roles) -> "ClusterPartition":
        return cls(tuple(frozenset([v]) for v in range(n)), **roles)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @cached_property
    def cluster_of(self) -> dict[int, int]:
        return {v: i for i, c in enumerate(self.clusters) for v in c}

    @property
    def roles(self) -> tuple[str, ...]:
        out = [PLAIN] * self.n_clusters
        if self.sensitive is not None:
            out[self.sensitive] = SENSITIVE
        if self.admissible is not None:
            out[self.admissible] = ADMISSIBLE
        return tuple(out)

    def variables(self, cluster_ids: Iterable[int]) -> set[int]:
        out: set[int] = set()
        for i in cluster_ids:
            out |= self.clusters[i]
        return out

    def check_covers(self, n_nodes: int) -> None:
        if set(self.cluster_of) != set(range(n_nodes)):
            raise ValueError("partition does not cover exactly the DAG's variables")

    def to_dict(self) -> dict:
        return {"clusters": [sorted(c) for c in self.clusters], "roles": list(self.roles)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterPartition":
        roles = doc.get("roles") or [PLAIN] * len(doc["clusters"])
        return cls(
            tuple(frozenset(c) for c in doc["clusters"]),
            sensitive=roles.index(SENSITIVE) if SENSITIVE in roles else None,
            admissible=roles.index(ADMISSIBLE) if ADMISSIBLE in roles else None,
        )


class ArcState(str, enum.Enum):
    MARG = "marg"
    COND = "cond"
    NEVER = "never"


def arc_key(i: int, k: int, j: int) -> tuple[int, int, int]:
    """Canonical triplet key: outer clusters sorted, middle kept in place."""
    return (i, k, j) if i < j else (j, k, i)


@dataclass(frozen=True)
class IndependenceArc:
    triplet: tuple[int, int, int]
    state: ArcState
    connection_marks: frozenset[int] = frozenset()
    separation_marks: frozenset[int] = frozenset()

    def __post_init__(self):
        i, k, j = self.triplet
        if len({i, k, j}) != 3:
            raise ValueError("arc triplet clusters must be distinct")
        object.__setattr__(self, "triplet", arc_key(i, k, j))
        object.__setattr__(self, "state", ArcState(self.state))
        object.__setattr__(self, "connection_marks", frozenset(self.connection_marks))
        object.__setattr__(self, "separation_marks", frozenset(self.separation_marks))
        if self.connection_marks and self.state is ArcState.MARG:
            raise ValueError("connection marks are only allowed on cond/never arcs")

    @property
    def middle(self) -> int:
        return self.triplet[1]

    def to_dict(self) -> dict:
        return {"triplet": list(self.triplet), "state": self.state.value,
                "conn_marks": sorted(self.connection_marks),
                "sep_marks": sorted(self.separation_marks)}

    @classmethod
    def from_dict(cls, doc: dict) -> "IndependenceArc":
        return cls(tuple(doc["triplet"]), ArcState(doc["state"]),
                   frozenset(doc["conn_marks"]), frozenset(doc["sep_marks"]))


@dataclass(frozen=True)
class ClusterDag:
    """Cluster-level DAG carrying independence arcs and marks."""

    n_clusters: int
    edges: frozenset[tuple[int, int]]
    arcs: tuple[IndependenceArc, ...] = ()
    partition: ClusterPartition | None = field(default=None, compare=False)

    def __post_init__(self):
        edges = frozenset((int(u), int(v)) for u, v in self.edges)
        for u, v in edges:
            if u == v or not (0 <= u < self.n_clusters and 0 <= v < self.n_clusters):
                raise ValueError(f"invalid cluster edge ({u}, {v})")
        if _topological_order(self.n_clusters, edges) is None:
            raise ValueError("cluster edges contain a directed cycle")
        arcs = tuple(sorted(self.arcs, key=lambda a: a.triplet))
        for a in arcs:
            if any(not 0 <= c < self.n_clusters for c in a.triplet):
                raise ValueError(f"arc {a.triplet} references an unknown cluster")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "arcs", arcs)

    @cached_property
    def arc_map(self) -> dict[tuple[int, int, int], IndependenceArc]:
        return {a.triplet: a for a in self.arcs}

    def arc(self, i: int, k: int, j: int) -> IndependenceArc | None:
        return self.arc_map.get(arc_key(i, k, j))

    @cached_property
    def parents(self) -> tuple[frozenset[int], ...]:
        pa: list[set[int]] = [set() for _ in range(self.n_clusters)]
        for u, v in self.edges:
            pa[v].add(u)
        return tuple(frozenset(p) for p in pa)

    @cached_property
    def children(self) -> tuple[frozenset[int], ...]:
        ch: list[set[int]] = [set() for _ in range(self.n_clusters)]
        for u, v in self.edges:
            ch[u].add(v)
        return tuple(frozenset(c) for c in ch)

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        return tuple(p | c for p, c in zip(self.parents, self.children))

    @cached_property
    def skeleton(self) -> frozenset[tuple[int, int]]:
        return frozenset((min(u, v), max(u, v)) for u, v in self.edges)

    def descendants(self, c: int) -> frozenset[int]:
        return frozenset(_reach([c], self.children))

    def with_edges(self, edges: Iterable[tuple[int, int]]) -> "ClusterDag":
        return replace(self, edges=frozenset(edges))

    def to_dict(self) -> dict:
        doc = {
            "nodes": list(range(self.n_clusters)),
            "edges": [list(e) for e in sorted(self.edges)],
            "partition": None,
            "roles": None,
            "arcs": [a.to_dict() for a in self.arcs],
        }
        if self.partition is not None:
            doc["partition"] = [sorted(c) for c in self.partition.clusters]
            doc["roles"] = list(self.partition.roles)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterDag":
        return cls(len(doc["nodes"]), frozenset(tuple(e) for e in doc["edges"]),
                   tuple(IndependenceArc.from_dict(a) for a in doc["arcs"]),
                   _partition_from_doc(doc))


def _partition_from_doc(doc: dict) -> ClusterPartition | None:
    if doc.get("partition") is None:
        return None
    return ClusterPartition.from_dict({"clusters": doc["partition"], "roles": doc.get("roles")})


# ---------------------------------------------------------------------------
# d-separation


def _check_disjoint(x: set, y: set, z: set) -> None:
    if x & y or x & z or y & z:
        raise ValueError("x, y and z must be pairwise disjoint")


def dsep_variables(dag: VariableDag, x: Iterable[int], y: Iterable[int], z: Iterable[int] = ()) -> bool:
    """True iff every path between ``x`` and ``y`` is blocked given ``z``.

    Reachability search over (node, direction) states, so it never enumerates
    paths.  "up" means the node was entered from one of its children.
    """
    x, y, z = set(x), set(y), set(z)
    _check_disjoint(x, y, z)
    for v in x | y | z:
        if not 0 <= v < dag.n_nodes:
            raise ValueError(f"unknown node {v}")
    if not x or not y:
        return True
    anc_z = dag.ancestors(z)
    pa, ch = dag.parents, dag.children
    visited: set[tuple[int, bool]] = set()
    queue = deque((v, True) for v in x)
    while queue:
        v, up = queue.popleft()
        if (v, up) in visited:
            continue
        visited.add((v, up))
        if v in y:
            return False
        if up:
            if v in z:
                continue
            queue.extend((p, True) for p in pa[v])
            queue.extend((c, False) for c in ch[v])
        else:
            if v not in z:
                queue.extend((c, False) for c in ch[v])
            if v in anc_z:
                queue.extend((p, True) for p in pa[v])
    return True


# ---------------------------------------------------------------------------
# projection


def project_clusters(dag: VariableDag, partition: ClusterPartition) -> frozenset[tuple[int, int]]:
    partition.check_covers(dag.n_nodes)
    of = partition.cluster_of
    return frozenset((of[u], of[v]) for u, v in dag.edges if of[u] != of[v])


def is_admissible(dag: VariableDag, partition: ClusterPartition) -> bool:
    edges = project_clusters(dag, partition)
    return _topological_order(partition.n_clusters, edges) is not None


def _skeleton_neighbors(n: int, edges: Iterable[tuple[int, int]]) -> list[set[int]]:
    nb: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        nb[u].add(v)
        nb[v].add(u)
    return nb


def find_separating_set(dag: VariableDag, partition: ClusterPartition, i: int, j: int) -> tuple[int, ...] | None:
    """Smallest cluster set separating clusters ``i`` and ``j`` (lexicographic tie-break)."""
    vi, vj = partition.clusters[i], partition.clusters[j]
    others = [c for c in range(partition.n_clusters) if c not in (i, j)]
    for size in range(len(others) + 1):
        for s in itertools.combinations(others, size):
            if dsep_variables(dag, vi, vj, partition.variables(s)):
                return s
    return None


def _arc_from_sepset(dag, partition, i, k, j, sepset) -> ArcState | None:
    if sepset is None:
        return None
    if k in sepset:
        return ArcState.MARG
    z = partition.variables(sepset) | partition.clusters[k]
    if dsep_variables(dag, partition.clusters[i], partition.clusters[j], z):
        return ArcState.NEVER
    return ArcState.COND


def compute_arc_state(dag: VariableDag, partition: ClusterPartition,
                      triplet: tuple[int, int, int]) -> ArcState | None:
    """Arc state of a cluster triplet, or None when no separating set exists.

    If the outer clusters are adjacent the triplet is treated as manipulated:
    every variable edge between them is removed before the search.
    """
    i, k, j = triplet
    if len({i, k, j}) != 3:
        raise ValueError("triplet clusters must be distinct")
    cluster_edges = project_clusters(dag, partition)
    graph = dag
    if (i, j) in cluster_edges or (j, i) in cluster_edges:
        graph = dag.without_edges_between(partition.clusters[i], partition.clusters[j])
    return _arc_from_sepset(graph, partition, i, k, j, find_separating_set(graph, partition, i, j))


# ---------------------------------------------------------------------------
# analogous paths and marks


def is_analogous(variable_path: Sequence[int], cluster_path: Sequence[int],
                 partition: ClusterPartition) -> bool:
    if not variable_path or not cluster_path:
        return False
    position = {c: t for t, c in enumerate(cluster_path)}
    of = partition.cluster_of
    steps = []
    for v in variable_path:
        c = of.get(v)
        if c not in position:
            return False
        steps.append(position[c])
    if set(steps) != set(range(len(cluster_path))):
        return False
    return all(b >= a for a, b in zip(steps, steps[1:]))


def _analogous_paths(dag: VariableDag, partition: ClusterPartition,
                     cluster_path: Sequence[int]) -> Iterator[list[int]]:
    """All simple variable paths analogous to ``cluster_path``."""
    position = {c: t for t, c in enumerate(cluster_path)}
    of = partition.cluster_of
    last = len(cluster_path) - 1
    nb = dag.neighbors
    stack = [[v] for v in sorted(partition.clusters[cluster_path[0]], reverse=True)]
    while stack:
        path = stack.pop()
        t = position[of[path[-1]]]
        if t == last and len(path) > 1 or (last == 0):
            yield path
        on_path = set(path)
        for w in sorted(nb[path[-1]], reverse=True):
            if w in on_path:
                continue
            tw = position.get(of[w])
            if tw is not None and tw in (t, t + 1):
                stack.append(path + [w])


def _colliders(dag: VariableDag, path: Sequence[int]) -> list[tuple[int, bool]]:
    """(node, is_collider) for interior nodes of a variable path."""
    out = []
    for a, b, c in zip(path, path[1:], path[2:]):
        out.append((b, a in dag.parents[b] and c in dag.parents[b]))
    return out


def _connectable(dag: VariableDag, partition: ClusterPartition, path: Sequence[int],
                 excluded: set[int]) -> bool:
    """Does some conditioning cluster set make ``path`` active?

    Clusters holding a path non-collider can never be conditioned on, nor can
    the excluded (endpoint) clusters.  Conditioning on every other cluster is
    the most permissive choice, so it decides existence.
    """
    of = partition.cluster_of
    interior = _colliders(dag, path)
    forbidden = excluded | {of[v] for v, coll in interior if not coll}
    allowed = partition.variables(c for c in range(partition.n_clusters) if c not in forbidden)
    for v, coll in interior:
        if coll and not ((dag.descendants(v) | {v}) & allowed):
            return False
    return True


def _confined_paths(dag: VariableDag, partition: ClusterPartition,
                    cluster_path: Sequence[int]) -> Iterator[list[int]]:
    """Simple variable paths from the first to the last cluster of ``cluster_path``.

    Only the endpoints touch the end clusters; interior variables may wander
    between the path's clusters in any order, and every cluster must be used.
    """
    of = partition.cluster_of
    allowed = set(cluster_path)
    first, last = cluster_path[0], cluster_path[-1]
    nb = dag.neighbors
    stack = [[v] for v in sorted(partition.clusters[first], reverse=True)]
    while stack:
        path = stack.pop()
        for w in sorted(nb[path[-1]], reverse=True):
            cw = of[w]
            if w in path or cw not in allowed or cw == first:
                continue
            if cw == last:
                if {of[v] for v in path} | {cw} == allowed:
                    yield path + [w]
            else:
                stack.append(path + [w])


def _paths_through(dag: VariableDag, partition: ClusterPartition,
                   i: int, k: int, j: int) -> Iterator[list[int]]:
    """Simple variable paths from cluster ``i`` to cluster ``j`` that visit cluster ``k``.

    The route is otherwise unrestricted: it may leave the three clusters.
    """
    of = partition.cluster_of
    nb = dag.neighbors
    stack = [([v], False) for v in sorted(partition.clusters[i], reverse=True)]
    while stack:
        path, seen_k = stack.pop()
        for w in sorted(nb[path[-1]], reverse=True):
            cw = of[w]
            if w in path or cw == i:
                continue
            if cw == j:
                if seen_k:
                    yield path + [w]
            else:
                stack.append((path + [w], seen_k or cw == k))


class _ConnectingPaths:
    """Memoised existence of d-connecting paths per cluster path."""

    def __init__(self, dag: VariableDag, partition: ClusterPartition, paths=_analogous_paths):
        self.dag, self.partition, self.paths = dag, partition, paths
        self._memo: dict[tuple[int, ...], bool] = {}

    def __call__(self, cluster_path: tuple[int, ...]) -> bool:
        if cluster_path not in self._memo:
            ends = {cluster_path[0], cluster_path[-1]}
            self._memo[cluster_path] = any(
                _connectable(self.dag, self.partition, p, ends)
                for p in self.paths(self.dag, self.partition, cluster_path)
            )
        return self._memo[cluster_path]


def _simple_cluster_paths(neighbors: Sequence[set[int]], min_len: int) -> Iterator[tuple[int, ...]]:
    """Each undirected simple path with at least ``min_len`` nodes, once (first < last)."""
    n = len(neighbors)
    for s in range(n):
        stack = [(s,)]
        while stack:
            path = stack.pop()
            if len(path) >= min_len and path[0] < path[-1]:
                yield path
            for w in sorted(neighbors[path[-1]], reverse=True):
                if w not in path:
                    stack.append(path + (w,))


def connection_mark_clusters(dag: VariableDag, partition: ClusterPartition,
                             triplet: tuple[int, int, int]) -> frozenset[int]:
    """Clusters whose conditioning can activate a collider between the outer clusters.

    Every collider on a variable path from the left to the right cluster that
    passes through the middle cluster contributes the clusters holding it or
    any of its descendants.  The triplet's own clusters are left out.
    """
    i, k, j = triplet
    of = partition.cluster_of
    colliders: set[int] = set()
    for path in _paths_through(dag, partition, i, k, j):
        colliders.update(v for v, coll in _colliders(dag, path) if coll)
    marks = set()
    for v in colliders:
        marks |= {of[u] for u in dag.descendants(v) | {v}}
    return frozenset(marks - {i, k, j})


def compute_marks(dag: VariableDag, partition: ClusterPartition,
                  cluster_edges: Iterable[tuple[int, int]],
                  arcs: Iterable[IndependenceArc]) -> tuple[IndependenceArc, ...]:
    """Return ``arcs`` annotated with connection and separation marks.

    A separation mark needs the whole cluster path to be unconnectable even by
    variable paths that revisit its clusters, while the prefix and suffix must
    be connectable by monotone (analogous) paths.
    """
    arcs = {a.triplet: a for a in arcs}
    neighbors = _skeleton_neighbors(partition.n_clusters, cluster_edges)

    conn = {
        key: connection_mark_clusters(dag, partition, key) if arc.state is not ArcState.MARG else frozenset()
        for key, arc in arcs.items()
    }

    sep: dict[tuple[int, int, int], set[int]] = {key: set() for key in arcs}
    analogous = _ConnectingPaths(dag, partition)
    confined = _ConnectingPaths(dag, partition, _confined_paths)
    for path in _simple_cluster_paths(neighbors, 4):
        keys = [arc_key(*path[t:t + 3]) for t in range(len(path) - 2)]
        if any(key not in arcs or arcs[key].state is ArcState.NEVER for key in keys):
            continue
        if confined(path) or not analogous(path[:-1]) or not analogous(path[1:]):
            continue
        sep[keys[-1]].add(path[0])
        sep[keys[0]].add(path[-1])

    return tuple(
        IndependenceArc(key, arc.state, conn[key], frozenset(sep[key]))
        for key, arc in sorted(arcs.items())
    )


def build_cluster_dag(dag: VariableDag, partition: ClusterPartition) -> ClusterDag:
    """Project ``dag`` onto ``partition`` and annotate every triplet."""
    cluster_edges = project_clusters(dag, partition)
    if _topological_order(partition.n_clusters, cluster_edges) is None:
        raise AdmissibilityError("partition induces a directed cycle among clusters")
    neighbors = _skeleton_neighbors(partition.n_clusters, cluster_edges)
    skeleton = {(min(u, v), max(u, v)) for u, v in cluster_edges}

    sepsets: dict[tuple[int, int], tuple[int, ...] | None] = {}
    graphs: dict[tuple[int, int], VariableDag] = {}
    arcs = []
    for k in range(partition.n_clusters):
        for i, j in itertools.combinations(sorted(neighbors[k]), 2):
            if (i, j) not in sepsets:
                graph = dag
                if (i, j) in skeleton:
                    graph = dag.without_edges_between(partition.clusters[i], partition.clusters[j])
                graphs[i, j] = graph
                sepsets[i, j] = find_separating_set(graph, partition, i, j)
            state = _arc_from_sepset(graphs[i, j], partition, i, k, j, sepsets[i, j])
            if state is not None:
                arcs.append(IndependenceArc((i, k, j), state))
    annotated = compute_marks(dag, partition, cluster_edges, arcs)
    return ClusterDag(partition.n_clusters, cluster_edges, annotated, partition)
