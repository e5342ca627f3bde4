import numpy as np
import pytest

from clusterfair.graphs import BINARY, CONTINUOUS, ClusterPartition, VariableDag, project_clusters
from clusterfair.scm import (
    LINEAR,
    SENSITIVE_AMPLIFICATION,
    Dataset,
    Scm,
    build_scm,
    generate_problem,
    random_partition,
    sample_er_dag,
    sample_interventional,
    sample_observational,
    split_dataset,
)

from conftest import binary_scm, exact_marginals


class TestErDag:
    def test_zero_degree(self, rng):
        assert sample_er_dag(6, 0.0, rng).edges == ()

    def test_degree_bound(self, rng):
        with pytest.raises(ValueError):
            sample_er_dag(4, 4.0, rng)
        with pytest.raises(ValueError):
            sample_er_dag(1, 0.5, rng)

    def test_deterministic(self):
        a = sample_er_dag(12, 2.0, np.random.default_rng(5))
        b = sample_er_dag(12, 2.0, np.random.default_rng(5))
        assert a == b

    def test_expected_degree(self):
        rng = np.random.default_rng(0)
        degrees = [2 * len(sample_er_dag(15, 2.0, rng).edges) / 15 for _ in range(400)]
        assert abs(np.mean(degrees) - 2.0) < 0.1


class TestBuildScm:
    def test_invariants(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            prob = generate_problem(5, rng)
            scm, part = prob.scm, prob.partition
            for v in range(scm.n_variables):
                assert scm.weights[v].shape == (len(scm.dag.parents[v]),)
            assert len(scm.target_parents) == part.n_clusters
            assert [part.cluster_of[v] for v in scm.target_parents] == list(range(part.n_clusters))
            assert SENSITIVE_AMPLIFICATION * 0.5 <= abs(scm.target_weights[part.sensitive]) \
                <= SENSITIVE_AMPLIFICATION * 2.0

    def test_roles_required(self):
        dag = VariableDag(2, ((0, 1),))
        with pytest.raises(ValueError):
            build_scm(dag, ClusterPartition.singletons(2), LINEAR, np.random.default_rng(0))
        with pytest.raises(ValueError):
            build_scm(dag, ClusterPartition.singletons(2, sensitive=0), "quadratic", np.random.default_rng(0))

    def test_root_is_standard_normal(self):
        dag = VariableDag(2, ((0, 1),))
        scm = build_scm(dag, ClusterPartition.singletons(2, sensitive=1), LINEAR, np.random.default_rng(0))
        x = sample_observational(scm, 100_000, np.random.default_rng(1)).X[:, 0]
        assert abs(x.mean()) < 0.02 and abs(x.std() - 1) < 0.02

    def test_chain_correlation(self):
        dag = VariableDag(2, ((0, 1),))
        base = build_scm(dag, ClusterPartition.singletons(2, sensitive=0), LINEAR, np.random.default_rng(0))
        scm = Scm(dag, base.partition, LINEAR, (np.zeros(0), np.ones(1)), (None, None),
                  base.target_parents, base.target_weights)
        X = sample_observational(scm, 100_000, np.random.default_rng(2)).X
        assert abs(np.corrcoef(X[:, 0], X[:, 1])[0, 1] - 1 / np.sqrt(2)) < 0.01

    def test_round_trip(self, rng):
        scm = generate_problem(4, rng, kind="nonlinear").scm
        again = Scm.from_dict(scm.to_dict())
        X1 = sample_observational(scm, 50, np.random.default_rng(0)).X
        X2 = sample_observational(again, 50, np.random.default_rng(0)).X
        assert np.array_equal(X1, X2)


class TestSampling:
    def test_binary_columns(self, rng):
        prob = generate_problem(5, rng)
        ds = sample_observational(prob.scm, 500, rng)
        for v, kind in enumerate(prob.dag.kinds):
            if kind == BINARY:
                assert set(np.unique(ds.X[:, v])) <= {0.0, 1.0}

    def test_bit_identical(self):
        prob = generate_problem(5, np.random.default_rng(3))
        a = sample_observational(prob.scm, 300, np.random.default_rng(9))
        b = sample_observational(prob.scm, 300, np.random.default_rng(9))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)

    def test_partial_cluster_intervention(self, hiring):
        dag, part = hiring
        scm = build_scm(dag, part, LINEAR, np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_interventional(scm, {0: 1.0}, 10, np.random.default_rng(0))

    def test_binary_values_only(self):
        scm = binary_scm(VariableDag(2, ((0, 1),)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            sample_interventional(scm, {0: 0.5}, 10, np.random.default_rng(0))

    def test_intervened_columns_fixed(self, hiring):
        dag, part = hiring
        scm = build_scm(dag, part, LINEAR, np.random.default_rng(0))
        ds = sample_interventional(scm, {0: 1.0, 1: 0.0}, 100, np.random.default_rng(0))
        assert np.all(ds.X[:, 0] == 1) and np.all(ds.X[:, 1] == 0)

    def test_root_intervention_equals_conditioning(self):
        dag = VariableDag(3, ((0, 1), (1, 2)))
        scm = binary_scm(dag, np.random.default_rng(4))
        n = 100_000
        obs = sample_observational(scm, n, np.random.default_rng(5)).X
        cond = obs[obs[:, 0] == 1][:, 2].mean()
        do = sample_interventional(scm, {0: 1.0}, n, np.random.default_rng(6)).X[:, 2].mean()
        assert abs(cond - do) <= 0.02

    def test_surgery_matches_truncated_factorization(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            n = int(rng.integers(3, 7))
            dag = sample_er_dag(n, 2.0, rng)
            scm = binary_scm(dag, rng, sensitive=int(rng.integers(n)))
            a = scm.partition.sensitive
            for val in (0.0, 1.0):
                emp = sample_interventional(scm, {a: val}, 100_000, rng).X.mean(axis=0)
                assert np.max(np.abs(emp - exact_marginals(scm, {a: val}))) <= 0.02

    def test_coupled_noise(self, hiring):
        dag, part = hiring
        scm = build_scm(dag, part, LINEAR, np.random.default_rng(0))
        d0 = sample_interventional(scm, {0: 0.0, 1: 0.0}, 200, np.random.default_rng(1))
        d1 = sample_interventional(scm, {0: 0.0, 1: 0.0}, 200, np.random.default_rng(1))
        assert np.array_equal(d0.X, d1.X)
        # E is upstream of A, so an intervention on A leaves it untouched
        d2 = sample_interventional(scm, {0: 1.0, 1: 1.0}, 200, np.random.default_rng(1))
        assert np.array_equal(d0.X[:, 6], d2.X[:, 6])


class TestProblem:
    def test_partition_admissible(self, rng):
        for _ in range(10):
            prob = generate_problem(5, rng)
            assert prob.partition.n_clusters == 5
            assert all(len(c) == 3 for c in prob.partition.clusters)

    def test_sensitive_binary(self, rng):
        prob = generate_problem(5, rng)
        for v in prob.partition.clusters[prob.partition.sensitive]:
            assert prob.dag.kinds[v] == BINARY

    def test_admissible_is_child_of_sensitive(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            prob = generate_problem(5, rng, admissible=True)
            part = prob.partition
            assert (part.sensitive, part.admissible) in project_clusters(prob.dag, part)

    def test_random_partition_fallback(self):
        # a full chain cut into pairs only admits contiguous blocks
        dag = VariableDag(6, tuple((i, i + 1) for i in range(5)))
        part = random_partition(dag, 2, np.random.default_rng(0), max_tries=0)
        assert {tuple(sorted(c)) for c in part.clusters} == {(0, 1), (2, 3), (4, 5)}


class TestDataset:
    def test_split(self, rng):
        prob = generate_problem(4, rng)
        ds = sample_observational(prob.scm, 1000, rng)
        train, val, test = split_dataset(ds, rng)
        assert (train.n, val.n, test.n) == (800, 100, 100)
        assert train.split == "train" and val.split == "validation" and test.split == "test"
        with pytest.raises(ValueError):
            split_dataset(ds, rng, (0.5, 0.2, 0.2))

    def test_csv_round_trip(self, rng, tmp_path):
        prob = generate_problem(4, rng)
        ds = sample_observational(prob.scm, 50, rng, seed=3)
        ds.save(tmp_path / "d.csv")
        again = Dataset.load(tmp_path / "d.csv")
        assert np.allclose(again.X, ds.X) and np.allclose(again.y, ds.y)
        assert again.partition == ds.partition

    def test_validates(self, hiring):
        _, part = hiring
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 7)), np.zeros(0), part, (CONTINUOUS,) * 7)
