"""Experiment orchestration for the synthetic benchmark.

A cell is one (seed, method, lambda) run: generate the problem, build the
cluster CPDAG, enumerate adjustment sets, fit propensity models and the
predictor, then evaluate against the true SCM.  Tables and trade-off curves
are deterministic folds over cells sorted by (method or lambda, seed).
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import subprocess
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr
from sklearn.pipeline import Pipeline
from sklearn.preprocessing import StandardScaler

from .adjustment import AdjustmentFamily, enumerate_adjustment_sets
from .equivalence import (
    DEFAULT_CAPACITY,
    ClusterCpdag,
    build_cluster_cpdag,
    definite_descendants,
    enumerate_cluster_mec,
)
from .exceptions import IdentificationError, StageError
from .fairness import LAMBDA_GRID, GroupIndex, PenaltyConfig, RffMap, median_heuristic, penalty
from .graphs import build_cluster_dag
from .learn import ColumnSelector, FairRegressor, Mlp, PropensityModel, forward
from .metrics import EvalReport, evaluate, rmse
from .scm import LINEAR, NONLINEAR, Dataset, Problem, generate_problem, sample_observational, split_dataset

logger = logging.getLogger(__name__)

METHODS = ("full", "unaware", "no-descs", "oracle", "c-ifair")
LAMBDA_SWEEP = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0)
TABLE_COLUMNS = ("method", "d", "kind", "rmse_mean", "rmse_std", "unf_mean", "unf_std",
                 "n_seeds", "seeds", "config_hash")
CELL_COLUMNS = ("method", "seed", "lam", "rmse", "unfairness", "M", "refinement_rounds", "config_hash")
TRADEOFF_COLUMNS = ("lam", "d", "kind", "rmse_mean", "rmse_std", "unf_mean", "unf_std",
                    "n_seeds", "seeds", "config_hash")
SEED_STREAMS = ("problem", "split", "propensity", "train", "eval")
SEED_MIXING = ("numpy.random.SeedSequence([base_seed, seed]).spawn(5) -> "
               + ", ".join(SEED_STREAMS))
# fields that change what a cell computes; out and workers do not
_RESULT_FIELDS = ("d", "vars_per_cluster", "kind", "expected_degree", "n", "split", "base_seed",
                  "admissible", "capacity", "lambda_grid", "epochs", "batch_size", "learning_rate",
                  "hidden", "propensity_hidden", "propensity_epochs", "n_eval")
_PROBLEM_FIELDS = ("d", "vars_per_cluster", "kind", "expected_degree", "n", "split", "base_seed",
                   "admissible", "capacity")


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 5
    vars_per_cluster: int = 3
    kind: str = LINEAR
    expected_degree: float = 2.0
    n: int = 5000
    split: tuple[float, ...] = (0.8, 0.1, 0.1)
    seeds: tuple[int, ...] = tuple(range(20))
    methods: tuple[str, ...] = METHODS
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    lambda_sweep: tuple[float, ...] = LAMBDA_SWEEP
    admissible: bool = False
    out: str = "runs"
    base_seed: int = 0
    epochs: int = 1000
    batch_size: int = 256
    learning_rate: float = 1e-3
    hidden: int = 32
    propensity_hidden: int = 64
    propensity_epochs: int = 200
    n_eval: int = 1000
    capacity: int = DEFAULT_CAPACITY
    workers: int = 1

    def __post_init__(self):
        for name in ("split", "seeds", "methods", "lambda_grid", "lambda_sweep"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.split) != 3 or any(f < 0 for f in self.split) or not np.isclose(sum(self.split), 1.0):
            raise ValueError("split needs three non-negative fractions summing to 1")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.kind not in (LINEAR, NONLINEAR):
            raise ValueError(f"unknown scm kind {self.kind!r}")
        if min(self.d, self.vars_per_cluster, self.n, self.epochs, self.batch_size,
               self.hidden, self.n_eval, self.workers) < 1:
            raise ValueError("sizes and counts must be positive")
        if self.learning_rate <= 0 or any(lam < 0 for lam in self.lambda_grid + self.lambda_sweep):
            raise ValueError("learning rate must be positive and lambdas non-negative")

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_(self, **changes) -> "ExperimentConfig":
        return type(self).from_dict(self.to_dict() | changes)

    @property
    def hash(self) -> str:
        doc = {k: self.to_dict()[k] for k in _RESULT_FIELDS}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]

    def problem_key(self) -> tuple:
        return tuple((k, getattr(self, k)) for k in _PROBLEM_FIELDS)


def seed_streams(base_seed: int, seed: int) -> dict[str, np.random.SeedSequence]:
    children = np.random.SeedSequence([base_seed, seed]).spawn(len(SEED_STREAMS))
    return dict(zip(SEED_STREAMS, children))


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


@contextmanager
def _stage(name: str, seed: int, method: str | None = None):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, seed, method, exc) from exc


@dataclass
class Prepared:
    """Everything about one seed that does not depend on the method."""

    seed: int
    problem: Problem
    data: Dataset
    train: Dataset
    val: Dataset
    test: Dataset
    y_mean: float
    y_std: float
    cpdag: ClusterCpdag
    family: AdjustmentFamily | None
    family_error: str | None = None

    def scaled(self, y) -> np.ndarray:
        return (np.asarray(y) - self.y_mean) / self.y_std

    def role_columns(self) -> tuple[list[int], list[int]]:
        part = self.problem.partition
        a_cols = sorted(part.clusters[part.sensitive])
        x_cols = [] if part.admissible is None else sorted(part.clusters[part.admissible])
        return a_cols, x_cols


@lru_cache(maxsize=32)
def _prepare_cached(key: tuple, seed: int) -> Prepared:
    spec = dict(key)
    streams = seed_streams(spec["base_seed"], seed)
    with _stage("generate", seed):
        rng = np.random.default_rng(streams["problem"])
        problem = generate_problem(spec["d"], rng, vars_per_cluster=spec["vars_per_cluster"],
                                   expected_degree=spec["expected_degree"], kind=spec["kind"],
                                   admissible=spec["admissible"])
        data = sample_observational(problem.scm, spec["n"], rng, seed=seed)
        train, val, test = split_dataset(data, np.random.default_rng(streams["split"]), spec["split"])
    with _stage("graph", seed):
        cluster_dag = build_cluster_dag(problem.dag, problem.partition)
        cpdag = build_cluster_cpdag(enumerate_cluster_mec(cluster_dag, spec["capacity"]))
    family, family_error = None, None
    try:
        with _stage("adjust", seed):
            family = enumerate_adjustment_sets(problem.dag, problem.partition, capacity=spec["capacity"])
    except StageError as exc:
        # only c-ifair needs the family; it re-raises this when asked
        family_error = str(exc)
        logger.warning("%s", exc)
    y_std = float(train.y.std()) or 1.0
    return Prepared(seed, problem, data, train, val, test, float(train.y.mean()), y_std,
                    cpdag, family, family_error)


def prepare(cfg: ExperimentConfig, seed: int) -> Prepared:
    return _prepare_cached(cfg.problem_key(), seed)


def method_columns(prep: Prepared, method: str) -> list[int]:
    """Input columns each method is allowed to see."""
    dag, part = prep.problem.dag, prep.problem.partition
    everything = set(range(dag.n_nodes))
    a_vars = part.clusters[part.sensitive]
    if method in ("full", "c-ifair"):
        keep = everything
    elif method == "unaware":
        keep = everything - a_vars
    elif method == "no-descs":
        keep = everything - part.variables(definite_descendants(prep.cpdag, part.sensitive))
    elif method == "oracle":
        descendants = set(a_vars)
        for v in a_vars:
            descendants |= dag.descendants(v)
        keep = everything - descendants
    else:
        raise ValueError(f"unknown method {method!r}")
    return sorted(keep)


def _pipeline(columns, last_step) -> Pipeline:
    return Pipeline([("select", ColumnSelector(tuple(columns))),
                     ("scale", StandardScaler() if columns else "passthrough"),
                     ("model", last_step)])


@dataclass
class PenaltyInputs:
    groups: GroupIndex
    propensity_models: list[Pipeline]
    variable_sets: list[list[int]]

    def codes(self, prep: Prepared, ds: Dataset) -> np.ndarray:
        a_cols, x_cols = prep.role_columns()
        return self.groups.encode(ds.X[:, a_cols], ds.X[:, x_cols] if x_cols else None)

    def own_proba(self, X, codes) -> np.ndarray:
        """(n, M) probability of each row's own group; rows of unseen groups get 1."""
        out = np.ones((codes.size, len(self.propensity_models)))
        known = np.flatnonzero(codes >= 0)
        for m, pipe in enumerate(self.propensity_models):
            proba = pipe.predict_proba(X)
            out[known, m] = proba[known, codes[known]]
        return out


def fit_propensities(cfg: ExperimentConfig, prep: Prepared) -> PenaltyInputs:
    if prep.family is None:
        raise IdentificationError(prep.family_error or "no adjustment family")
    sets = prep.family.variable_sets()
    if not sets:
        raise IdentificationError("every adjustment candidate failed completion")
    a_cols, x_cols = prep.role_columns()
    train = prep.train
    groups = GroupIndex.from_columns(train.X[:, a_cols], train.X[:, x_cols] if x_cols else None)
    streams = seed_streams(cfg.base_seed, prep.seed)["propensity"].spawn(len(sets))
    models = []
    for cols, seq in zip(sets, streams):
        clf = PropensityModel(hidden=cfg.propensity_hidden, epochs=cfg.propensity_epochs,
                              batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                              n_classes=groups.n_groups, random_state=_int_seed(seq))
        models.append(_pipeline(cols, clf).fit(train.X, groups.codes))
    return PenaltyInputs(groups, models, sets)


def _regressor(cfg: ExperimentConfig, lam: float, seed: int) -> FairRegressor:
    return FairRegressor(hidden=cfg.hidden, epochs=cfg.epochs, batch_size=cfg.batch_size,
                         learning_rate=cfg.learning_rate, lam=lam,
                         random_state=_int_seed(seed_streams(cfg.base_seed, seed)["train"]))


def validation_penalty(pipe: Pipeline, prep: Prepared, inputs: PenaltyInputs, seed: int) -> float:
    """Penalty of a fitted predictor on the whole validation split (float64 features)."""
    val = prep.val
    codes = inputs.codes(prep, val)
    pred = pipe.predict(val.X)
    rng = np.random.default_rng(seed_streams(seed, prep.seed)["eval"])
    rff = RffMap.draw(128, rng, bandwidth=median_heuristic(pred))
    return penalty(pred, codes, inputs.groups, inputs.own_proba(val.X, codes), rff,
                   PenaltyConfig(lam=1.0)).value


@dataclass
class TrainedModel:
    pipeline: Pipeline
    lam: float
    columns: list[int]
    selection: list[dict] = field(default_factory=list)   # {"lam", "val_rmse", "val_penalty", "score"}
    inputs: PenaltyInputs | None = None

    @property
    def history(self) -> list[dict]:
        return self.pipeline.named_steps["model"].history_


def train_method(cfg: ExperimentConfig, prep: Prepared, method: str, lam: float | None = None) -> TrainedModel:
    """Fit one method.  c-ifair without a fixed ``lam`` picks it from the grid
    by validation RMSE plus validation penalty."""
    seed = prep.seed
    cols = method_columns(prep, method)
    y_train = prep.scaled(prep.train.y)
    if method != "c-ifair" or lam == 0:
        with _stage("train", seed, method):
            pipe = _pipeline(cols, _regressor(cfg, 0.0, seed)).fit(prep.train.X, y_train)
        return TrainedModel(pipe, 0.0, cols)
    with _stage("propensity", seed, method):
        inputs = fit_propensities(cfg, prep)
    codes = inputs.codes(prep, prep.train)
    fit_params = {"model__group_codes": codes, "model__groups": inputs.groups,
                  "model__propensities": inputs.own_proba(prep.train.X, codes)}
    grid = cfg.lambda_grid if lam is None else (lam,)
    best, selection = None, []
    y_val = prep.scaled(prep.val.y)
    with _stage("train", seed, method):
        for value in grid:
            pipe = _pipeline(cols, _regressor(cfg, value, seed)).fit(prep.train.X, y_train, **fit_params)
            if len(grid) == 1:
                return TrainedModel(pipe, value, cols, [], inputs)
            val_rmse = rmse(pipe.predict(prep.val.X), y_val)
            val_pen = validation_penalty(pipe, prep, inputs, cfg.base_seed)
            selection.append({"lam": value, "val_rmse": val_rmse, "val_penalty": val_pen,
                              "score": val_rmse + val_pen})
            if best is None or selection[-1]["score"] < best[0]:
                best = (selection[-1]["score"], value, pipe)
    return TrainedModel(best[2], best[1], cols, selection, inputs)


@dataclass
class CellResult:
    method: str
    seed: int
    lam: float
    report: EvalReport
    M: int
    refinement_rounds: int
    config_hash: str
    selection: list[dict] = field(default_factory=list)

    def row(self) -> dict:
        return {"method": self.method, "seed": self.seed, "lam": self.lam,
                "rmse": self.report.rmse, "unfairness": self.report.unfairness,
                "M": self.M, "refinement_rounds": self.refinement_rounds,
                "config_hash": self.config_hash}

    def to_dict(self) -> dict:
        return asdict(self)


def _lam_tag(lam: float | None) -> str:
    return "sel" if lam is None else f"{lam:g}"


def checkpoint_dict(model: TrainedModel, prep: Prepared) -> dict:
    scaler = model.pipeline.named_steps["scale"]
    return {
        "columns": model.columns,
        "scaler": None if scaler == "passthrough" else
        {"mean": scaler.mean_.tolist(), "scale": scaler.scale_.tolist()},
        "lam": model.lam,
        "y_mean": prep.y_mean,
        "y_std": prep.y_std,
        "mlp": model.pipeline.named_steps["model"].model_.to_dict(),
    }


class CheckpointModel:
    """Predictor rebuilt from a checkpoint; predicts on the standardized target scale."""

    def __init__(self, doc: dict):
        self.columns = list(doc["columns"])
        self.scaler = doc["scaler"]
        self.lam = doc["lam"]
        self.mlp = Mlp.from_dict(doc["mlp"])

    @classmethod
    def load(cls, path) -> "CheckpointModel":
        return cls(json.loads(Path(path).read_text()))

    def predict(self, X) -> np.ndarray:
        Z = np.asarray(X, dtype=float)[:, self.columns]
        if self.scaler is not None:
            Z = (Z - np.asarray(self.scaler["mean"])) / np.asarray(self.scaler["scale"])
        return forward(self.mlp, Z)[0][:, 0]


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in columns})


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


def graph_document(prep: Prepared) -> dict:
    p = prep.problem
    return {"seed": prep.seed, "dag": p.dag.to_dict(), "partition": p.partition.to_dict(),
            "scm": p.scm.to_dict(), "cpdag": prep.cpdag.to_dict(),
            "adjustment": None if prep.family is None else prep.family.to_dict(),
            "adjustment_error": prep.family_error}


def run_cell(cfg: ExperimentConfig, seed: int, method: str, lam: float | None = None,
             persist: bool = True) -> CellResult:
    """Train and evaluate one method on one generated dataset."""
    prep = prepare(cfg, seed)
    model = train_method(cfg, prep, method, lam)
    eval_seed = _int_seed(seed_streams(cfg.base_seed, seed)["eval"])
    with _stage("evaluate", seed, method):
        report = evaluate(model.pipeline, prep.test.X, prep.scaled(prep.test.y), prep.problem.scm,
                          cfg.n_eval, eval_seed)
    fam = prep.family
    result = CellResult(method, seed, model.lam, report,
                        0 if fam is None else len(fam.completed),
                        -1 if fam is None else fam.refinement_rounds, cfg.hash, model.selection)
    if persist:
        out = Path(cfg.out)
        tag = f"{cfg.hash}_{method}_seed{seed}_lam{_lam_tag(lam)}"
        _write_json(out / "graphs" / f"{cfg.hash}_seed{seed}.json", graph_document(prep))
        _write_json(out / "checkpoints" / f"{tag}.json", checkpoint_dict(model, prep))
        log_rows = [{"epoch": r["epoch"], "loss": r["loss"], "penalty": r["penalty"],
                     "candidates": ";".join(f"{v:.6f}" for v in r.get("candidates", []))}
                    for r in model.history]
        _write_csv(out / "checkpoints" / f"{tag}_log.csv", ("epoch", "loss", "penalty", "candidates"), log_rows)
        _write_json(out / "results" / f"cell_{tag}.json", result.to_dict())
    return result


def _cell_task(args) -> CellResult:
    cfg, seed, method, lam = args
    return run_cell(cfg, seed, method, lam)


def run_cells(cfg: ExperimentConfig, tasks: list[tuple]) -> list[CellResult]:
    """Run (seed, method, lam) cells, in a worker pool when ``cfg.workers`` > 1."""
    jobs = [(cfg, seed, method, lam) for seed, method, lam in tasks]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            return list(pool.map(_cell_task, jobs))
    return [_cell_task(job) for job in jobs]


def code_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    from . import __version__
    return __version__


def _manifest(cfg: ExperimentConfig, kind: str, extra: dict | None = None) -> None:
    doc = {"kind": kind, "config": cfg.to_dict(), "config_hash": cfg.hash, "seeds": list(cfg.seeds),
           "seed_mixing": SEED_MIXING, "code_version": code_version()}
    _write_json(Path(cfg.out) / "manifests" / f"{kind}_{cfg.hash}.json", doc | (extra or {}))


def _summary(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def _aggregate(cfg: ExperimentConfig, results: list[CellResult], key: str, value) -> dict:
    rmse_mean, rmse_std = _summary([r.report.rmse for r in results])
    unf_mean, unf_std = _summary([r.report.unfairness for r in results])
    seeds = sorted(r.seed for r in results)
    return {key: value, "d": cfg.d, "kind": cfg.kind, "rmse_mean": rmse_mean, "rmse_std": rmse_std,
            "unf_mean": unf_mean, "unf_std": unf_std, "n_seeds": len(seeds),
            "seeds": ";".join(map(str, seeds)), "config_hash": cfg.hash}


@dataclass
class Table:
    rows: list[dict]
    cells: list[CellResult]

    def by_method(self) -> dict[str, dict]:
        return {r["method"]: r for r in self.rows}


def run_table(cfg: ExperimentConfig) -> Table:
    """Mean and standard deviation over seeds for every method."""
    tasks = [(seed, method, None) for method in cfg.methods for seed in sorted(cfg.seeds)]
    cells = run_cells(cfg, tasks)
    rows = [_aggregate(cfg, [c for c in cells if c.method == m], "method", m) for m in cfg.methods]
    out = Path(cfg.out) / "results"
    _write_csv(out / f"table_{cfg.hash}.csv", TABLE_COLUMNS, rows)
    _write_csv(out / f"cells_{cfg.hash}.csv", CELL_COLUMNS, [c.row() for c in cells])
    _manifest(cfg, "table")
    return Table(rows, cells)


def _spearman(x, y) -> float:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y).statistic)


@dataclass
class TradeoffCurve:
    rows: list[dict]
    cells: list[CellResult]
    spearman_unfairness: float
    spearman_rmse: float


def run_tradeoff(cfg: ExperimentConfig, lambdas=None) -> TradeoffCurve:
    """c-ifair at fixed lambdas; per-lambda means with rank correlations."""
    lambdas = tuple(cfg.lambda_sweep if lambdas is None else lambdas)
    if not lambdas:
        raise ValueError("lambda list must be nonempty")
    tasks = [(seed, "c-ifair", float(lam)) for lam in lambdas for seed in sorted(cfg.seeds)]
    cells = run_cells(cfg, tasks)
    rows = [_aggregate(cfg, [c for c in cells if c.lam == float(lam)], "lam", float(lam)) for lam in lambdas]
    lam_axis = [r["lam"] for r in rows]
    curve = TradeoffCurve(rows, cells,
                          _spearman(lam_axis, [r["unf_mean"] for r in rows]),
                          _spearman(lam_axis, [r["rmse_mean"] for r in rows]))
    out = Path(cfg.out) / "results"
    _write_csv(out / f"tradeoff_{cfg.hash}.csv", TRADEOFF_COLUMNS, rows)
    _write_json(out / f"tradeoff_{cfg.hash}_summary.json",
                {"spearman_lambda_unfairness": curve.spearman_unfairness,
                 "spearman_lambda_rmse": curve.spearman_rmse, "config_hash": cfg.hash})
    _manifest(cfg, "tradeoff", {"lambdas": list(lambdas)})
    return curve
