"""Interventionally fair prediction from cluster-level causal graphs."""

__version__ = "0.1.0"

from .adjustment import AdjustmentFamily, Candidate, complete_adjustment_set, enumerate_adjustment_sets, enumerate_possible_parent_sets
from .equivalence import ClusterCpdag, build_cluster_cpdag, dsep_clusters, enumerate_cluster_mec
from .exceptions import AdmissibilityError, CapacityError, EmptyGroupError, IdentificationError, StageError
from .fairness import GroupIndex, PenaltyConfig, RffMap, ipw_weights, mellowmax, penalty, rff_features
from .graphs import ArcState, ClusterDag, ClusterPartition, IndependenceArc, VariableDag, build_cluster_dag, dsep_variables
from .harness import ExperimentConfig, run_cell, run_table, run_tradeoff
from .learn import ColumnSelector, FairRegressor, Mlp, PropensityModel
from .metrics import EvalReport, rmse, unfairness
from .scm import Dataset, Scm, generate_problem, sample_interventional, sample_observational

__all__ = [
    "AdjustmentFamily", "AdmissibilityError", "ArcState", "Candidate", "CapacityError",
    "ClusterCpdag", "ClusterDag", "ClusterPartition", "ColumnSelector", "Dataset",
    "EmptyGroupError", "EvalReport", "ExperimentConfig", "FairRegressor", "GroupIndex",
    "IdentificationError", "IndependenceArc", "Mlp", "PenaltyConfig", "PropensityModel",
    "RffMap", "Scm", "StageError", "VariableDag", "build_cluster_cpdag", "build_cluster_dag",
    "complete_adjustment_set", "dsep_clusters", "dsep_variables", "enumerate_adjustment_sets",
    "enumerate_cluster_mec", "enumerate_possible_parent_sets", "generate_problem", "ipw_weights",
    "mellowmax", "penalty", "rff_features", "rmse", "run_cell", "run_table", "run_tradeoff",
    "sample_interventional", "sample_observational", "unfairness",
]
