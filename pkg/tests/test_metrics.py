import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clusterfair.graphs import BINARY, CONTINUOUS, VariableDag
from clusterfair.metrics import (
    EvalReport,
    binary_assignments,
    evaluate,
    interventional_predictions,
    mmd_squared,
    rmse,
    unfairness,
)
from clusterfair.scm import LINEAR, build_scm, sample_observational

KINDS = (BINARY, BINARY, BINARY, BINARY, CONTINUOUS, CONTINUOUS, CONTINUOUS)


@pytest.fixture
def hiring_scm(hiring):
    dag, part = hiring
    dag = VariableDag(dag.n_nodes, dag.edges, KINDS)
    return build_scm(dag, part, LINEAR, np.random.default_rng(0))


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_offset(self):
        assert rmse(np.arange(5.0) + 0.3, np.arange(5.0)) == pytest.approx(0.3)

    def test_example(self):
        assert rmse([0, 0], [3, 4]) == pytest.approx(3.5355339, abs=1e-6)

    def test_errors(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            rmse([], [])


class TestMmd:
    def test_same_sample_zero(self):
        x = np.random.default_rng(0).normal(size=50)
        assert mmd_squared(x, x, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_point_masses(self):
        # k(0,0)=k(1,1)=1, k(0,1)=exp(-1/2)
        assert mmd_squared([0.0], [1.0], 1.0) == pytest.approx(2 - 2 * np.exp(-0.5))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=20),
           st.lists(st.floats(-5, 5), min_size=1, max_size=20),
           st.floats(0.1, 5))
    def test_non_negative_and_symmetric(self, x, y, bw):
        assert mmd_squared(x, y, bw) >= 0
        assert mmd_squared(x, y, bw) == pytest.approx(mmd_squared(y, x, bw), abs=1e-12)


def test_binary_assignments():
    assert binary_assignments([4, 9]) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)]
    assert binary_assignments([]) == [()]


class TestUnfairness:
    def test_constant_predictor(self, hiring_scm):
        value, table = unfairness(lambda X: np.zeros(len(X)), hiring_scm, 200, seed=0)
        assert value == 0.0
        # 4 A values give 6 unordered pairs, times 4 admissible values
        assert len(table) == 24

    def test_upstream_predictor_is_fair(self, hiring_scm):
        # E1 sits above A, and cells share noise, so its values never move
        value, _ = unfairness(lambda X: X[:, 6], hiring_scm, 1500, seed=1)
        assert value < 0.01

    def test_sensitive_predictor_is_unfair(self, hiring_scm):
        value, _ = unfairness(lambda X: X[:, 0], hiring_scm, 2000, seed=2)
        assert value > 0.1

    def test_relabeling_symmetry(self, hiring_scm):
        # flipping A1 permutes the cells, which leaves the average unchanged
        v1, _ = unfairness(lambda X: X[:, 0] + X[:, 1], hiring_scm, 300, seed=3)
        v2, _ = unfairness(lambda X: (1 - X[:, 0]) + X[:, 1], hiring_scm, 300, seed=3)
        assert v1 == pytest.approx(v2, rel=1e-9)

    def test_coupled_cells(self, hiring_scm):
        _, _, preds = interventional_predictions(lambda X: X[:, 6], hiring_scm, 100, seed=4)
        first = next(iter(preds.values()))
        assert all(np.array_equal(p, first) for p in preds.values())

    def test_small_n_eval(self, hiring_scm):
        with pytest.raises(ValueError):
            unfairness(lambda X: X[:, 0], hiring_scm, 1, seed=0)

    def test_needs_binary_roles(self, hiring):
        scm = build_scm(*hiring, LINEAR, np.random.default_rng(0))
        with pytest.raises(ValueError):
            unfairness(lambda X: X[:, 0], scm, 10, seed=0)


class TestReport:
    def test_evaluate_and_round_trip(self, hiring_scm, tmp_path):
        test = sample_observational(hiring_scm, 100, np.random.default_rng(5))
        report = evaluate(lambda X: X[:, 2], test.X, test.y, hiring_scm, n_eval=50, seed=6)
        assert report.n_cells == 16
        again = EvalReport.from_dict(report.to_dict())
        assert again == report
        report.save(tmp_path / "r.json")
        assert set(report.csv_row()) == {"rmse", "unfairness", "n_eval", "n_cells", "seed"}

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            EvalReport(-1.0, 0.0)
