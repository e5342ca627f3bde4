"""Two-layer perceptron, AdamW and the penalized training loop.

Parameters live in one flat array with per-layer views, so the optimizer
update touches a single buffer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fairness import (
    DEFAULT_MULTIPLIERS,
    GroupIndex,
    PenaltyConfig,
    RffMap,
    median_heuristic,
    penalty,
)

logger = logging.getLogger(__name__)

IDENTITY, SIGMOID, SOFTMAX = "identity", "sigmoid", "softmax"
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class Mlp:
    """input -> hidden (ReLU) -> output, with an identity, sigmoid or softmax head."""

    def __init__(self, n_inputs: int, n_hidden: int = 32, n_outputs: int = 1, head: str = IDENTITY):
        if head not in (IDENTITY, SIGMOID, SOFTMAX):
            raise ValueError(f"unknown head {head!r}")
        self.shapes = {"W1": (n_inputs, n_hidden), "b1": (n_hidden,),
                       "W2": (n_hidden, n_outputs), "b2": (n_outputs,)}
        self.head = head
        self.flat = np.zeros(sum(int(np.prod(s)) for s in self.shapes.values()))
        self.params = self._views(self.flat)
        self.version = 0

    def _views(self, buffer: np.ndarray) -> dict[str, np.ndarray]:
        out, start = {}, 0
        for name in PARAM_NAMES:
            size = int(np.prod(self.shapes[name]))
            out[name] = buffer[start:start + size].reshape(self.shapes[name])
            start += size
        return out

    @classmethod
    def initialized(cls, n_inputs: int, rng: np.random.Generator, n_hidden: int = 32,
                    n_outputs: int = 1, head: str = IDENTITY) -> "Mlp":
        """Uniform fan-in initialisation, zero biases."""
        model = cls(n_inputs, n_hidden, n_outputs, head)
        lim1 = 1.0 / np.sqrt(max(n_inputs, 1))
        lim2 = 1.0 / np.sqrt(n_hidden)
        model.params["W1"][...] = rng.uniform(-lim1, lim1, model.shapes["W1"])
        model.params["W2"][...] = rng.uniform(-lim2, lim2, model.shapes["W2"])
        return model

    @property
    def n_inputs(self) -> int:
        return self.shapes["W1"][0]

    def zero_like(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        buf = np.zeros_like(self.flat)
        return buf, self._views(buf)

    def bump(self) -> None:
        self.version += 1

    def to_dict(self) -> dict:
        return {"head": self.head,
                "shapes": {k: list(v) for k, v in self.shapes.items()},
                "params": {k: self.params[k].ravel().tolist() for k in PARAM_NAMES}}

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        n_in, n_hidden = doc["shapes"]["W1"]
        model = cls(n_in, n_hidden, doc["shapes"]["W2"][1], doc["head"])
        for k in PARAM_NAMES:
            model.params[k][...] = np.asarray(doc["params"][k]).reshape(model.shapes[k])
        return model


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    outputs: np.ndarray
    version: int


def forward(model: Mlp, inputs) -> tuple[np.ndarray, ForwardCache]:
    X = np.asarray(inputs, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ValueError(f"expected inputs of width {model.n_inputs}, got shape {X.shape}")
    p = model.params
    pre = X @ p["W1"] + p["b1"]
    hid = np.maximum(pre, 0.0)
    z = hid @ p["W2"] + p["b2"]
    if model.head == SIGMOID:
        out = expit(z)
    elif model.head == SOFTMAX:
        out = softmax(z, axis=1)
    else:
        out = z
    return out, ForwardCache(X, pre, hid, out, model.version)


def backward(model: Mlp, cache: ForwardCache, output_gradient=None, *, logit_gradient=None,
             out: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Parameter gradients given d loss / d outputs (or d loss / d logits).

    The ReLU subgradient at 0 is 0.  ``out`` optionally receives the flat
    gradient buffer so callers can avoid an allocation.
    """
    if cache.version != model.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    if logit_gradient is None:
        g = np.asarray(output_gradient, dtype=float).reshape(cache.outputs.shape)
        if model.head == SIGMOID:
            dz = g * cache.outputs * (1.0 - cache.outputs)
        elif model.head == SOFTMAX:
            s = cache.outputs
            dz = s * (g - (g * s).sum(axis=1, keepdims=True))
        else:
            dz = g
    else:
        dz = np.asarray(logit_gradient, dtype=float).reshape(cache.outputs.shape)
    if out is None:
        out = np.zeros_like(model.flat)
    grads = model._views(out)
    p = model.params
    np.matmul(cache.hidden.T, dz, out=grads["W2"])
    grads["b2"][...] = dz.sum(axis=0)
    dh = (dz @ p["W2"].T) * (cache.hidden_pre > 0)
    np.matmul(cache.inputs.T, dh, out=grads["W1"])
    grads["b1"][...] = dh.sum(axis=0)
    return grads


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2

    @classmethod
    def for_params(cls, flat: np.ndarray, weight_decay: float = 1e-2) -> "OptimizerState":
        return cls(np.zeros_like(flat), np.zeros_like(flat), weight_decay=weight_decay)


def optimizer_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray, lr: float) -> np.ndarray:
    """AdamW with bias correction and decoupled weight decay, in place on ``params``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes must match")
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient; step rejected")
    state.step += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grads * grads
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    update = m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        update += state.weight_decay * params
    params -= lr * update
    return params


def _spawn(random_state, n: int) -> list[np.random.Generator]:
    seq = np.random.SeedSequence(random_state)
    return [np.random.default_rng(s) for s in seq.spawn(n)]


def objective_and_gradient(model: Mlp, X: np.ndarray, y: np.ndarray, lam: float = 0.0,
                           group_codes=None, groups: GroupIndex | None = None,
                           propensities=None, rff: RffMap | None = None,
                           cfg: PenaltyConfig | None = None, adaptive_bandwidth: bool = False):
    """Mean squared error plus ``lam`` times the penalty, with the flat gradient.

    With ``adaptive_bandwidth`` the RFF bandwidth is reset to the median
    heuristic of the current (detached) predictions.
    Returns (objective, loss, penalty_result_or_None, flat_gradient).
    """
    pred, cache = forward(model, X)
    pred = pred[:, 0]
    resid = pred - y
    loss = float(np.mean(resid ** 2))
    dpred = 2.0 * resid / y.shape[0]
    result = None
    obj = loss
    if lam > 0:
        if adaptive_bandwidth:
            rff = rff.with_bandwidth(median_heuristic(pred))
        result = penalty(pred, group_codes, groups, propensities, rff, cfg)
        obj += lam * result.value
        dpred = dpred + lam * result.gradient
    grad = np.zeros_like(model.flat)
    backward(model, cache, dpred[:, None], out=grad)
    return obj, loss, result, grad


class FairRegressor(RegressorMixin, BaseEstimator):
    """MLP regressor trained on squared error plus the unfairness penalty.

    ``fit`` takes the penalty inputs as keyword arguments: ``group_codes``
    (row groups from a :class:`GroupIndex`), ``groups`` and ``propensities``
    (an (n, M) array of own-group probabilities per adjustment candidate).
    They are ignored when ``lam`` is 0.

    ``bandwidth`` sets the base RFF bandwidth: ``"target"`` takes the median
    heuristic of the training targets once, ``"batch"`` recomputes it from each
    minibatch's predictions, and a number fixes it.
    """

    def __init__(self, hidden: int = 32, epochs: int = 1000, batch_size: int = 256,
                 learning_rate: float = 1e-3, weight_decay: float = 1e-2, lam: float = 0.0,
                 mellowmax_omega: float = 10.0, clip_quantile: float = 1.0, d_rff: int = 128,
                 multipliers=DEFAULT_MULTIPLIERS, bandwidth="target", feature_dtype: str = "float32",
                 random_state=None):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lam = lam
        self.mellowmax_omega = mellowmax_omega
        self.clip_quantile = clip_quantile
        self.d_rff = d_rff
        self.multipliers = multipliers
        self.bandwidth = bandwidth
        self.feature_dtype = feature_dtype
        self.random_state = random_state

    def penalty_config(self) -> PenaltyConfig:
        return PenaltyConfig(self.lam, self.mellowmax_omega, self.clip_quantile, self.d_rff,
                             tuple(self.multipliers), feature_dtype=self.feature_dtype)

    def fit(self, X, y, group_codes=None, groups: GroupIndex | None = None, propensities=None):
        X, y = check_X_y(X, y, y_numeric=True, ensure_min_features=0)
        cfg = self.penalty_config()
        init_rng, shuffle_rng, rff_rng = _spawn(self.random_state, 3)
        n = X.shape[0]
        model = Mlp.initialized(X.shape[1], init_rng, self.hidden)
        state = OptimizerState.for_params(model.flat, self.weight_decay)
        use_penalty = cfg.lam > 0
        if use_penalty:
            if group_codes is None or groups is None or propensities is None:
                raise ValueError("lam > 0 needs group_codes, groups and propensities")
            group_codes = np.asarray(group_codes)
            propensities = np.asarray(propensities, dtype=float).reshape(n, -1)
            adaptive = self.bandwidth == "batch"
            if adaptive:
                base = 1.0
            elif self.bandwidth == "target":
                base = median_heuristic(y)
            elif isinstance(self.bandwidth, (int, float)) and self.bandwidth > 0:
                base = float(self.bandwidth)
            else:
                raise ValueError(f"bad bandwidth {self.bandwidth!r}")
            rff = RffMap.draw(cfg.d_rff, rff_rng, bandwidth=base, multipliers=cfg.multipliers)
        history = []
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            loss_sum = pen_sum = 0.0
            cand_sum = None
            batches = 0
            for start in range(0, n, self.batch_size):
                rows = order[start:start + self.batch_size]
                if use_penalty:
                    _, loss, res, grad = objective_and_gradient(
                        model, X[rows], y[rows], cfg.lam, group_codes[rows], groups,
                        propensities[rows], rff, cfg, adaptive_bandwidth=adaptive)
                    pen_sum += res.value
                    cand_sum = res.candidate_values if cand_sum is None else cand_sum + res.candidate_values
                else:
                    _, loss, _, grad = objective_and_gradient(model, X[rows], y[rows])
                optimizer_step(state, model.flat, grad, self.learning_rate)
                model.bump()
                loss_sum += loss
                batches += 1
            record = {"epoch": epoch, "loss": loss_sum / batches,
                      "penalty": pen_sum / batches if use_penalty else float("nan")}
            if cand_sum is not None:
                record["candidates"] = (cand_sum / batches).tolist()
            history.append(record)
        self.model_ = model
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return forward(self.model_, X)[0][:, 0]


class PropensityModel(ClassifierMixin, BaseEstimator):
    """Softmax MLP estimating P(group | adjustment columns).

    With no adjustment columns the class frequencies are returned.
    """

    def __init__(self, hidden: int = 64, epochs: int = 200, batch_size: int = 256,
                 learning_rate: float = 1e-3, weight_decay: float = 1e-2, n_classes=None,
                 random_state=None):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.n_classes = n_classes
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_features=0)
        y = y.astype(int)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        self.prior_ = np.bincount(y, minlength=k) / y.size
        if X.shape[1] == 0:
            self.model_ = None
            return self
        init_rng, shuffle_rng = _spawn(self.random_state, 2)
        model = Mlp.initialized(X.shape[1], init_rng, self.hidden, k, SOFTMAX)
        state = OptimizerState.for_params(model.flat, self.weight_decay)
        onehot = np.eye(k)[y]
        grad = np.zeros_like(model.flat)
        n = X.shape[0]
        for _ in range(self.epochs):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, self.batch_size):
                rows = order[start:start + self.batch_size]
                prob, cache = forward(model, X[rows])
                backward(model, cache, logit_gradient=(prob - onehot[rows]) / rows.size, out=grad)
                optimizer_step(state, model.flat, grad, self.learning_rate)
                model.bump()
        self.model_ = model
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X, ensure_min_features=0)
        if self.model_ is None:
            return np.tile(self.prior_, (X.shape[0], 1))
        return forward(self.model_, X)[0]

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def own_group_proba(self, X, group_codes) -> np.ndarray:
        proba = self.predict_proba(X)
        codes = np.asarray(group_codes)
        return proba[np.arange(codes.size), codes]


class ColumnSelector(TransformerMixin, BaseEstimator):
    """Keep a fixed list of columns."""

    def __init__(self, columns=()):
        self.columns = columns

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_features=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, ensure_min_features=0)
        return X[:, list(self.columns)]
