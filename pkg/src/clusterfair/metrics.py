"""Accuracy and interventional unfairness on synthetic data with a known SCM."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fairness import median_heuristic
from .graphs import BINARY
from .scm import Scm, sample_interventional

CSV_FIELDS = ("rmse", "unfairness", "n_eval", "n_cells", "seed")


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} targets")
    if p.size == 0:
        raise ValueError("rmse of empty vectors")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def _mean_kernel(x: np.ndarray, y: np.ndarray, bandwidth: float, chunk: int = 1024) -> float:
    """Mean of exp(-(x_i - y_j)^2 / (2 bandwidth^2)) over all pairs, in row chunks."""
    total = 0.0
    scale = -0.5 / bandwidth ** 2
    for start in range(0, x.size, chunk):
        d = x[start:start + chunk, None] - y[None, :]
        total += float(np.exp(scale * d * d).sum())
    return total / (x.size * y.size)


def mmd_squared(x, y, bandwidth: float) -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    val = (_mean_kernel(x, x, bandwidth) + _mean_kernel(y, y, bandwidth)
           - 2.0 * _mean_kernel(x, y, bandwidth))
    return max(val, 0.0)


def binary_assignments(variables) -> list[tuple[float, ...]]:
    return [tuple(float(b) for b in bits) for bits in itertools.product((0, 1), repeat=len(variables))]


@dataclass
class EvalReport:
    rmse: float
    unfairness: float
    pairs: list[dict] = field(default_factory=list)   # {"a", "a_prime", "xad", "mmd2"}
    n_eval: int = 0
    n_cells: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.rmse < 0 or self.unfairness < 0:
            raise ValueError("rmse and unfairness are non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(**doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def csv_row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


def _predict(model, X):
    fn = model.predict if hasattr(model, "predict") else model
    return np.asarray(fn(X), dtype=float).ravel()


def interventional_predictions(model, scm: Scm, n_eval: int, seed: int):
    """Predictions under do(A=a, X^ad=x) for every binary (a, x) combination.

    Every cell reuses the same noise seed, so cells differ only through the
    intervention.  Returns (a_values, xad_values, predictions[a][x]).
    """
    part = scm.partition
    if part.sensitive is None:
        raise ValueError("partition has no sensitive cluster")
    a_vars = sorted(part.clusters[part.sensitive])
    x_vars = [] if part.admissible is None else sorted(part.clusters[part.admissible])
    for v in a_vars + x_vars:
        if scm.dag.kinds[v] != BINARY:
            raise ValueError("interventional evaluation needs binary sensitive and admissible variables")
    a_vals = binary_assignments(a_vars)
    x_vals = binary_assignments(x_vars)
    preds = {}
    for a in a_vals:
        for x in x_vals:
            do = dict(zip(a_vars, a)) | dict(zip(x_vars, x))
            ds = sample_interventional(scm, do, n_eval, np.random.default_rng(seed))
            preds[a, x] = _predict(model, ds.X)
    return a_vals, x_vals, preds


def unfairness(model, scm: Scm, n_eval: int = 1000, rng: np.random.Generator | None = None,
               *, seed: int | None = None) -> tuple[float, list[dict]]:
    """Mean biased squared MMD over unordered sensitive-value pairs and admissible values.

    The Gaussian bandwidth is the median heuristic on all pooled predictions.
    Returns (value, per-pair table).
    """
    if n_eval < 2:
        raise ValueError("n_eval must be at least 2")
    if seed is None:
        rng = rng if rng is not None else np.random.default_rng()
        seed = int(rng.integers(2 ** 63))
    a_vals, x_vals, preds = interventional_predictions(model, scm, n_eval, seed)
    bandwidth = median_heuristic(np.concatenate(list(preds.values())))
    self_terms = {key: _mean_kernel(p, p, bandwidth) for key, p in preds.items()}
    table = []
    for x in x_vals:
        for a, b in itertools.combinations(a_vals, 2):
            cross = _mean_kernel(preds[a, x], preds[b, x], bandwidth)
            mmd2 = max(self_terms[a, x] + self_terms[b, x] - 2.0 * cross, 0.0)
            table.append({"a": list(a), "a_prime": list(b), "xad": list(x), "mmd2": mmd2})
    value = float(np.mean([row["mmd2"] for row in table])) if table else 0.0
    return value, table


def evaluate(model, X_test, y_test, scm: Scm, n_eval: int = 1000, seed: int = 0) -> EvalReport:
    value, table = unfairness(model, scm, n_eval, seed=seed)
    n_cells = len({(tuple(r[k]), tuple(r["xad"])) for r in table for k in ("a", "a_prime")})
    return EvalReport(rmse(_predict(model, X_test), y_test), value, table, n_eval, n_cells, seed)
