"""Shared fixtures and brute-force oracles."""
import itertools

import networkx as nx
import numpy as np
import pytest
from scipy.special import expit

from clusterfair.graphs import BINARY, ClusterPartition, VariableDag, build_cluster_dag, dsep_variables, is_admissible
from clusterfair.scm import LINEAR, build_scm


def _parts(*clusters, **roles):
    return ClusterPartition(tuple(frozenset(c) for c in clusters), **roles)


@pytest.fixture
def hiring():
    """Hiring scenario: A={A1,A2}, X^ad={X1,X2}, D={D1,D2}, E={E1}."""
    # A1=0 A2=1 X1=2 X2=3 D1=4 D2=5 E1=6
    dag = VariableDag(7, ((0, 2), (5, 2), (6, 2), (6, 1), (1, 4), (4, 5), (2, 3)))
    return dag, _parts({0, 1}, {2, 3}, {4, 5}, {6}, sensitive=0, admissible=1)


@pytest.fixture
def stress():
    """Nine variables in seven clusters with a never arc at Q={q1,q2}."""
    # x1=0 y1=1 q1=2 q2=3 w1=4 a1=5 a2=6 d1=7 e1=8
    dag = VariableDag(9, ((0, 2), (1, 3), (3, 2), (2, 4), (4, 5), (5, 6), (6, 7), (8, 7)))
    return dag, _parts({0}, {1}, {2, 3}, {4}, {5, 6}, {7}, {8}, sensitive=4)


def rand_instance(rng, max_clusters=6, max_size=3):
    """Random admissible (dag, partition) whose sensitive cluster has a neighbour."""
    while True:
        d = int(rng.integers(3, max_clusters + 1))
        sizes = rng.integers(1, max_size + 1, size=d)
        n = int(sizes.sum())
        order = rng.permutation(n)
        p = min(1.0, 2.0 / (n - 1))
        edges = [(int(order[a]), int(order[b])) for a in range(n) for b in range(a + 1, n)
                 if rng.random() < p]
        dag = VariableDag(n, tuple(edges))
        perm = rng.permutation(n)
        cuts = np.cumsum(sizes)[:-1]
        clusters = tuple(frozenset(int(v) for v in chunk) for chunk in np.split(perm, cuts))
        part = ClusterPartition(clusters, sensitive=0)
        if not is_admissible(dag, part):
            continue
        g = build_cluster_dag(dag, part)
        pool = [c for c in range(d) if g.neighbors[c]]
        if pool:
            return dag, ClusterPartition(clusters, sensitive=int(rng.choice(pool)))


def nx_dsep(dag, x, y, z):
    g = nx.DiGraph()
    g.add_nodes_from(range(dag.n_nodes))
    g.add_edges_from(dag.edges)
    fn = getattr(nx, "is_d_separator", None) or nx.d_separated
    return fn(g, set(x), set(y), set(z))


def path_dsep(dag, x, y, z):
    """d-separation by enumerating every simple skeleton path."""
    z = set(z)
    und = nx.Graph()
    und.add_nodes_from(range(dag.n_nodes))
    und.add_edges_from(dag.edges)
    edges = set(dag.edges)
    anc_z = set(z)
    for v in z:
        anc_z |= {u for u in range(dag.n_nodes) if v in dag.descendants(u)}
    for s, t in itertools.product(x, y):
        for path in nx.all_simple_paths(und, s, t):
            active = True
            for a, b, c in zip(path, path[1:], path[2:]):
                collider = (a, b) in edges and (c, b) in edges
                if collider and b not in anc_z or not collider and b in z:
                    active = False
                    break
            if active:
                return False
    return True


def backdoor_blocked(dag, a_vars, z_vars):
    """Z blocks every back-door path out of the A variables."""
    a_vars, z_vars = set(a_vars), set(z_vars)
    cut = VariableDag(dag.n_nodes, tuple(e for e in dag.edges if e[0] not in a_vars), dag.kinds)
    rest = set(range(dag.n_nodes)) - a_vars - z_vars
    if not rest:
        return True
    return dsep_variables(cut, a_vars, rest, z_vars)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_marginals(scm, do=None):
    """P(X_v = 1) for every v under ``do`` by enumerating all binary assignments."""
    n = scm.n_variables
    do = do or {}
    out = np.zeros(n)
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits, dtype=float)
        if any(x[v] != val for v, val in do.items()):
            continue
        p = 1.0
        for v in range(n):
            if v in do:
                continue
            pa = scm.parents_of(v)
            q = expit(x[pa] @ scm.weights[v]) if pa else 0.5
            p *= q if x[v] else 1 - q
        out += p * x
    return out


def binary_scm(dag, rng, sensitive=0):
    part = ClusterPartition.singletons(dag.n_nodes, sensitive=sensitive)
    dag = VariableDag(dag.n_nodes, dag.edges, (BINARY,) * dag.n_nodes)
    return build_scm(dag, part, LINEAR, rng)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
