import numpy as np
import pytest
from sklearn.base import clone

from clusterfair.fairness import GroupIndex, PenaltyConfig, RffMap
from clusterfair.learn import (
    IDENTITY,
    SIGMOID,
    SOFTMAX,
    ColumnSelector,
    FairRegressor,
    Mlp,
    OptimizerState,
    PropensityModel,
    backward,
    forward,
    objective_and_gradient,
    optimizer_step,
)


def penalty_problem(rng, n=48, d=3, M=2):
    X = rng.normal(size=(n, d))
    a = (X[:, 0] > 0).astype(int)
    xad = (X[:, 1] > 0).astype(int)
    groups = GroupIndex.from_columns(a, xad)
    codes = groups.encode(a, xad)
    y = X @ rng.normal(size=d) + 2 * a
    prop = rng.uniform(0.2, 0.8, (n, M))
    return X, y, codes, groups, prop


class TestMlp:
    def test_zero_weights_zero_output(self):
        model = Mlp(4, 8)
        out, _ = forward(model, np.ones((3, 4)))
        assert np.all(out == 0)

    def test_zero_output_gradient(self, rng):
        model = Mlp.initialized(3, rng, 5)
        _, cache = forward(model, rng.normal(size=(6, 3)))
        grads = backward(model, cache, np.zeros((6, 1)))
        assert all(np.all(g == 0) for g in grads.values())

    def test_stale_cache(self, rng):
        model = Mlp.initialized(2, rng, 4)
        _, cache = forward(model, np.ones((1, 2)))
        model.bump()
        with pytest.raises(ValueError):
            backward(model, cache, np.ones((1, 1)))

    def test_width_check(self, rng):
        with pytest.raises(ValueError):
            forward(Mlp.initialized(3, rng), np.ones((2, 4)))
        with pytest.raises(ValueError):
            Mlp(2, head="tanh")

    @pytest.mark.parametrize("head,k", [(IDENTITY, 2), (SIGMOID, 1), (SOFTMAX, 3)])
    def test_backward_matches_finite_differences(self, rng, head, k):
        model = Mlp.initialized(3, rng, 6, k, head)
        model.params["b1"][...] = 0.1
        X = rng.normal(size=(5, 3))
        probe = rng.normal(size=(5, k))
        _, cache = forward(model, X)
        grad = np.zeros_like(model.flat)
        backward(model, cache, probe, out=grad)
        h = 1e-6
        for i in range(model.flat.size):
            model.flat[i] += h
            up = (forward(model, X)[0] * probe).sum()
            model.flat[i] -= 2 * h
            down = (forward(model, X)[0] * probe).sum()
            model.flat[i] += h
            assert abs((up - down) / (2 * h) - grad[i]) <= 1e-5 * max(1.0, abs(grad[i]))

    def test_round_trip(self, rng):
        model = Mlp.initialized(3, rng, 4, 2, SOFTMAX)
        again = Mlp.from_dict(model.to_dict())
        X = rng.normal(size=(4, 3))
        assert np.allclose(forward(model, X)[0], forward(again, X)[0])


class TestOptimizer:
    def test_zero_gradient_no_decay(self):
        p = np.array([1.0, -2.0])
        state = OptimizerState.for_params(p, weight_decay=0.0)
        optimizer_step(state, p, np.zeros(2), 0.1)
        assert np.array_equal(p, [1.0, -2.0])

    def test_first_step_is_sign(self):
        p = np.zeros(3)
        state = OptimizerState.for_params(p, weight_decay=0.0)
        optimizer_step(state, p, np.array([3.0, -0.01, 50.0]), 0.01)
        assert np.allclose(p, [-0.01, 0.01, -0.01], atol=1e-8)

    def test_decay_shrinks(self):
        p = np.array([2.0])
        optimizer_step(OptimizerState.for_params(p, 0.5), p, np.zeros(1), 0.1)
        assert p[0] == pytest.approx(1.9)

    def test_non_finite(self):
        p = np.zeros(2)
        state = OptimizerState.for_params(p)
        with pytest.raises(FloatingPointError):
            optimizer_step(state, p, np.array([np.nan, 0.0]), 0.1)
        assert state.step == 0

    def test_shape_mismatch(self):
        p = np.zeros(2)
        with pytest.raises(ValueError):
            optimizer_step(OptimizerState.for_params(p), p, np.zeros(3), 0.1)


class TestObjective:
    def test_penalized_gradient(self, rng):
        X, y, codes, groups, prop = penalty_problem(rng)
        model = Mlp.initialized(3, rng, 8)
        model.params["b1"][...] = 0.05
        cfg = PenaltyConfig(lam=3.0, d_rff=32, feature_dtype="float64")
        rff = RffMap.draw(32, rng, bandwidth=1.5)
        args = (X, y, 3.0, codes, groups, prop, rff, cfg)
        _, _, _, grad = objective_and_gradient(model, *args)
        h = 1e-6
        for i in range(model.flat.size):
            model.flat[i] += h
            up = objective_and_gradient(model, *args)[0]
            model.flat[i] -= 2 * h
            down = objective_and_gradient(model, *args)[0]
            model.flat[i] += h
            fd = (up - down) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-4 * max(abs(fd), 1.0)

    def test_lambda_zero_is_plain_mse(self, rng):
        X, y, *_ = penalty_problem(rng)
        model = Mlp.initialized(3, rng)
        obj, loss, res, _ = objective_and_gradient(model, X, y)
        assert res is None and obj == loss == pytest.approx(np.mean((forward(model, X)[0][:, 0] - y) ** 2))


class TestFairRegressor:
    def test_deterministic(self, rng):
        X, y, codes, groups, prop = penalty_problem(rng)
        kw = dict(epochs=3, batch_size=16, lam=1.0, d_rff=16, random_state=4)
        a = FairRegressor(**kw).fit(X, y, codes, groups, prop)
        b = FairRegressor(**kw).fit(X, y, codes, groups, prop)
        assert np.array_equal(a.model_.flat, b.model_.flat)
        assert a.history_ == b.history_

    def test_lambda_zero_ignores_penalty_inputs(self, rng):
        X, y, codes, groups, prop = penalty_problem(rng)
        a = FairRegressor(epochs=3, random_state=1).fit(X, y)
        b = FairRegressor(epochs=3, random_state=1).fit(X, y, codes, groups, prop)
        assert np.array_equal(a.model_.flat, b.model_.flat)
        assert np.isnan(a.history_[0]["penalty"])

    def test_penalty_inputs_required(self, rng):
        X, y, *_ = penalty_problem(rng)
        with pytest.raises(ValueError):
            FairRegressor(epochs=1, lam=1.0).fit(X, y)

    def test_bad_bandwidth(self, rng):
        X, y, codes, groups, prop = penalty_problem(rng)
        with pytest.raises(ValueError):
            FairRegressor(epochs=1, lam=1.0, bandwidth="wide").fit(X, y, codes, groups, prop)

    @pytest.mark.parametrize("bandwidth", ["batch", 0.8])
    def test_bandwidth_modes(self, rng, bandwidth):
        X, y, codes, groups, prop = penalty_problem(rng)
        reg = FairRegressor(epochs=2, lam=1.0, d_rff=16, bandwidth=bandwidth, random_state=0)
        reg.fit(X, y, codes, groups, prop)
        assert len(reg.history_[0]["candidates"]) == prop.shape[1]

    def test_noise_target_learns_the_mean(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(600, 2))
        y = rng.normal(size=600) + 1.0
        reg = FairRegressor(hidden=8, epochs=60, learning_rate=1e-2, random_state=0).fit(X, y)
        resid = reg.predict(X) - y
        assert np.mean(resid ** 2) == pytest.approx(np.var(y), rel=0.1)

    def test_fits_linear_target(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(800, 3))
        y = X @ np.array([1.0, -2.0, 0.5])
        reg = FairRegressor(epochs=150, learning_rate=1e-2, random_state=0).fit(X, y)
        assert np.sqrt(np.mean((reg.predict(X) - y) ** 2)) < 0.2

    def test_predict_width(self, rng):
        X, y, *_ = penalty_problem(rng)
        reg = FairRegressor(epochs=1).fit(X, y)
        with pytest.raises(ValueError):
            reg.predict(X[:, :2])

    def test_sklearn_params(self):
        reg = FairRegressor(lam=4.0, d_rff=64)
        twin = clone(reg)
        assert twin.get_params() == reg.get_params()
        assert twin.set_params(lam=2.0).lam == 2.0


class TestPropensity:
    def test_prior_without_columns(self):
        y = np.array([0, 0, 0, 1])
        model = PropensityModel(n_classes=3).fit(np.zeros((4, 0)), y)
        assert np.allclose(model.predict_proba(np.zeros((2, 0))), [[0.75, 0.25, 0.0]] * 2)

    def test_learns_dependence(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2000, 1))
        y = (rng.random(2000) < 1 / (1 + np.exp(-3 * x[:, 0]))).astype(int)
        model = PropensityModel(epochs=40, learning_rate=1e-2, random_state=0).fit(x, y)
        p = model.predict_proba(np.array([[-2.0], [2.0]]))[:, 1]
        assert p[0] < 0.2 and p[1] > 0.8
        own = model.own_group_proba(x[:5], y[:5])
        assert np.allclose(own, model.predict_proba(x[:5])[np.arange(5), y[:5]])
        assert np.allclose(model.predict_proba(x).sum(axis=1), 1.0)


class TestColumnSelector:
    def test_selects(self):
        X = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(ColumnSelector([3, 1]).fit_transform(X), X[:, [3, 1]])

    def test_empty(self):
        assert ColumnSelector().fit_transform(np.ones((2, 3))).shape == (2, 0)
