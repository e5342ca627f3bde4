"""Random DAGs, cluster partitions and structural causal models.

The target ``y`` sits outside the variable DAG: it takes one parent from every
feature cluster and is never part of graph inference.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from .graphs import (
    BINARY,
    CONTINUOUS,
    ClusterPartition,
    VariableDag,
    build_cluster_dag,
    is_admissible,
    project_clusters,
)

LINEAR = "linear"
NONLINEAR = "nonlinear"
NONLINEARITIES = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh}
SENSITIVE_AMPLIFICATION = 5.0


def _weight(rng: np.random.Generator, size=None) -> np.ndarray:
    sign = rng.choice([-1.0, 1.0], size=size)
    return sign * rng.uniform(0.5, 2.0, size=size)


def sample_er_dag(d_v: int, expected_degree: float, rng: np.random.Generator,
                  kinds=None) -> VariableDag:
    """Erdos-Renyi DAG: uniform random order, each forward pair kept independently."""
    if d_v < 2:
        raise ValueError("d_v must be at least 2")
    if expected_degree < 0 or expected_degree >= d_v:
        raise ValueError("expected_degree must lie in [0, d_v)")
    p = min(1.0, expected_degree / (d_v - 1))
    order = rng.permutation(d_v)
    keep = rng.random((d_v, d_v)) < p
    edges = [
        (int(order[a]), int(order[b]))
        for a in range(d_v) for b in range(a + 1, d_v) if keep[a, b]
    ]
    return VariableDag(d_v, tuple(edges), kinds)


def random_partition(dag: VariableDag, vars_per_cluster: int, rng: np.random.Generator,
                     max_tries: int = 200) -> ClusterPartition:
    """Random equal-size partition that keeps the cluster graph acyclic.

    After ``max_tries`` rejected shuffles it falls back to chunking a
    topological order, which is admissible by construction.
    """
    d_v = dag.n_nodes
    if d_v % vars_per_cluster:
        raise ValueError("variable count must be a multiple of vars_per_cluster")
    for _ in range(max_tries):
        perm = rng.permutation(d_v)
        part = ClusterPartition(tuple(
            frozenset(int(v) for v in perm[s:s + vars_per_cluster])
            for s in range(0, d_v, vars_per_cluster)
        ))
        if is_admissible(dag, part):
            return part
    order = dag.topological_order
    return ClusterPartition(tuple(
        frozenset(order[s:s + vars_per_cluster]) for s in range(0, d_v, vars_per_cluster)
    ))


@dataclass(frozen=True)
class Scm:
    dag: VariableDag
    partition: ClusterPartition
    kind: str
    weights: tuple[np.ndarray, ...]          # aligned with sorted parents of each node
    nonlinearity: tuple[str | None, ...]
    target_parents: tuple[int, ...]
    target_weights: np.ndarray
    target_nonlinearity: str | None = None

    @property
    def n_variables(self) -> int:
        return self.dag.n_nodes

    def parents_of(self, v: int) -> list[int]:
        return sorted(self.dag.parents[v])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dag": self.dag.to_dict(),
            "partition": self.partition.to_dict(),
            "weights": [w.tolist() for w in self.weights],
            "nonlinearity": list(self.nonlinearity),
            "target_parents": list(self.target_parents),
            "target_weights": self.target_weights.tolist(),
            "target_nonlinearity": self.target_nonlinearity,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scm":
        return cls(
            VariableDag.from_dict(doc["dag"]),
            ClusterPartition.from_dict(doc["partition"]),
            doc["kind"],
            tuple(np.asarray(w, dtype=float) for w in doc["weights"]),
            tuple(doc["nonlinearity"]),
            tuple(doc["target_parents"]),
            np.asarray(doc["target_weights"], dtype=float),
            doc["target_nonlinearity"],
        )


def build_scm(dag: VariableDag, partition: ClusterPartition, kind: str,
              rng: np.random.Generator) -> Scm:
    if kind not in (LINEAR, NONLINEAR):
        raise ValueError(f"unknown scm kind {kind!r}")
    if partition.sensitive is None:
        raise ValueError("partition needs a sensitive cluster")
    partition.check_covers(dag.n_nodes)
    weights = tuple(_weight(rng, len(dag.parents[v])) for v in range(dag.n_nodes))
    names = sorted(NONLINEARITIES)
    nonlin = tuple(
        str(rng.choice(names)) if kind == NONLINEAR and dag.parents[v] else None
        for v in range(dag.n_nodes)
    )
    # one target parent per feature cluster; the sensitive one is amplified
    target_parents = tuple(int(rng.choice(sorted(c))) for c in partition.clusters)
    target_weights = _weight(rng, len(target_parents))
    target_weights[partition.sensitive] *= SENSITIVE_AMPLIFICATION
    target_nonlin = str(rng.choice(names)) if kind == NONLINEAR else None
    return Scm(dag, partition, kind, weights, nonlin, target_parents, target_weights, target_nonlin)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    partition: ClusterPartition
    kinds: tuple[str, ...]
    split: str = "train"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] == 0 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be a nonempty (n, d_v) matrix matching y")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, rows, split: str) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.partition, self.kinds, split,
                       self.seed, dict(self.meta))

    def columns(self, cluster_ids) -> list[int]:
        return sorted(self.partition.variables(cluster_ids))

    def save(self, path: str | Path, dag_file: str | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = ",".join([f"x{v}" for v in range(self.X.shape[1])] + ["y"])
        np.savetxt(path, np.column_stack([self.X, self.y]), delimiter=",",
                   header=header, comments="", fmt="%.10g")
        sidecar = {
            "roles": self.partition.to_dict(),
            "kinds": list(self.kinds),
            "seed": self.seed,
            "scm-kind": self.meta.get("scm_kind"),
            "dag-file": dag_file,
            "split": self.split,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1], ClusterPartition.from_dict(side["roles"]),
                   tuple(side["kinds"]), side["split"], side["seed"],
                   {"scm_kind": side["scm-kind"]})


def _check_intervention(scm: Scm, do: Mapping[int, float]) -> None:
    targets = set(do)
    for c in scm.partition.clusters:
        if c & targets and not c <= targets:
            raise ValueError("interventions must fix whole clusters")
    for v, val in do.items():
        if scm.dag.kinds[v] == BINARY and val not in (0, 1):
            raise ValueError(f"binary variable {v} can only be set to 0 or 1")


def _simulate(scm: Scm, n: int, rng: np.random.Generator,
              do: Mapping[int, float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling.  The noise layout never depends on ``do``, so one seed
    gives coupled draws across interventions."""
    if n <= 0:
        raise ValueError("n must be positive")
    d_v = scm.n_variables
    do = dict(do or {})
    normal = rng.standard_normal((n, d_v))
    uniform = rng.random((n, d_v))
    target_noise = rng.standard_normal(n)
    X = np.empty((n, d_v))
    for v in scm.dag.topological_order:
        if v in do:
            X[:, v] = do[v]
            continue
        pa = scm.parents_of(v)
        signal = X[:, pa] @ scm.weights[v] if pa else np.zeros(n)
        if scm.nonlinearity[v] is not None:
            signal = NONLINEARITIES[scm.nonlinearity[v]](signal)
        if scm.dag.kinds[v] == BINARY:
            X[:, v] = (uniform[:, v] < expit(signal)).astype(float)
        else:
            X[:, v] = signal + normal[:, v]
    signal = X[:, list(scm.target_parents)] @ scm.target_weights
    if scm.target_nonlinearity is not None:
        signal = NONLINEARITIES[scm.target_nonlinearity](signal)
    return X, signal + target_noise


def sample_observational(scm: Scm, n: int, rng: np.random.Generator, seed: int | None = None) -> Dataset:
    X, y = _simulate(scm, n, rng)
    return Dataset(X, y, scm.partition, scm.dag.kinds, "train", seed, {"scm_kind": scm.kind})


def sample_interventional(scm: Scm, do: Mapping[int, float], n: int,
                          rng: np.random.Generator, seed: int | None = None) -> Dataset:
    _check_intervention(scm, do)
    X, y = _simulate(scm, n, rng, do)
    return Dataset(X, y, scm.partition, scm.dag.kinds, "interventional", seed,
                   {"scm_kind": scm.kind, "do": {int(k): float(v) for k, v in do.items()}})


def split_dataset(ds: Dataset, rng: np.random.Generator,
                  fractions=(0.8, 0.1, 0.1)) -> tuple[Dataset, Dataset, Dataset]:
    if not np.isclose(sum(fractions), 1.0):
        raise ValueError("split fractions must sum to 1")
    perm = rng.permutation(ds.n)
    n_train = int(round(fractions[0] * ds.n))
    n_val = int(round(fractions[1] * ds.n))
    return (ds.subset(perm[:n_train], "train"),
            ds.subset(perm[n_train:n_train + n_val], "validation"),
            ds.subset(perm[n_train + n_val:], "test"))


def choose_roles(dag: VariableDag, partition: ClusterPartition, rng: np.random.Generator,
                 admissible: bool = False) -> ClusterPartition:
    """Pick the sensitive cluster (and optionally an admissible child cluster).

    The sensitive cluster is drawn uniformly from clusters of cluster degree
    >= 2, falling back to the highest-degree cluster.  With ``admissible`` only
    clusters that have a child cluster qualify.
    """
    edges = project_clusters(dag, partition)
    degree = np.zeros(partition.n_clusters, dtype=int)
    for u, v in edges:
        degree[u] += 1
        degree[v] += 1
    has_child = {u for u, _ in edges}
    pool = [c for c in range(partition.n_clusters) if not admissible or c in has_child]
    if not pool:
        raise ValueError("no cluster has a child cluster to serve as admissible")
    eligible = [c for c in pool if degree[c] >= 2]
    sensitive = int(rng.choice(eligible)) if eligible else max(pool, key=lambda c: (degree[c], -c))
    adm = None
    if admissible:
        children = sorted(v for u, v in edges if u == sensitive)
        if not children:
            raise ValueError("sensitive cluster has no child cluster to serve as admissible")
        adm = int(rng.choice(children))
    return ClusterPartition(partition.clusters, sensitive=sensitive, admissible=adm)


@dataclass(frozen=True)
class Problem:
    """Ground truth for one synthetic experiment: DAG, roles and SCM."""

    dag: VariableDag
    partition: ClusterPartition
    scm: Scm


def generate_problem(d: int, rng: np.random.Generator, *, vars_per_cluster: int = 3,
                     expected_degree: float = 2.0, kind: str = LINEAR,
                     admissible: bool = False) -> Problem:
    """DAG, admissible partition, roles, node kinds and SCM for ``d`` clusters.

    Sensitive and admissible clusters are binary; every other cluster is
    binary or continuous with equal probability.
    """
    d_v = d * vars_per_cluster
    skeleton = sample_er_dag(d_v, expected_degree, rng)
    part = random_partition(skeleton, vars_per_cluster, rng)
    part = choose_roles(skeleton, part, rng, admissible)
    cluster_kind = [BINARY if rng.random() < 0.5 else CONTINUOUS for _ in range(d)]
    cluster_kind[part.sensitive] = BINARY
    if part.admissible is not None:
        cluster_kind[part.admissible] = BINARY
    kinds = [CONTINUOUS] * d_v
    for c, members in enumerate(part.clusters):
        for v in members:
            kinds[v] = cluster_kind[c]
    dag = VariableDag(d_v, skeleton.edges, tuple(kinds))
    return Problem(dag, part, build_scm(dag, part, kind, rng))
