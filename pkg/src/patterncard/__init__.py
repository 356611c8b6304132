"""Online cardinality estimation with per-pattern local models.

Subqueries are turned into attributed DAGs, hashed canonically at three
levels of detail, and each hash bucket keeps the feature vectors and true
cardinalities seen so far.  Estimates come from a small model fit on the
most specific bucket with enough history, falling back to a histogram
heuristic.
"""
from .baseline import HeuristicEstimator, TableStats, analyze, heuristic_estimate
from .canonhash import Canonical, canonicalize, pattern_hash
from .featurize import FeatureExtractorSpec, FeatureVector, extract, featurize
from .hierarchy import (
    BiasTable, EstimateResult, EstimatorStore, LevelConfig, PatternBucket, StoreConfig,
    bias_adjust, default_levels,
)
from .learners import (
    GbdtModel, GbdtParams, KernelParams, RidgeModel, TrainingSet, composite_kernel, fit_gbdt,
    fit_lwlr, gaussian_kernel, predict_gbdt, predict_rbf_oneshot, to_cardinality,
)
from .oracle import Dataset, Table, load_csv, true_cardinality
from .querygraph import (
    AttrKey, NodeType, QueryDag, Schema, enumerate_subqueries, parse_sql,
)
from .simulate import (
    QErrorSummary, RunConfig, emit_reports, percentile, q_error, run_simulation,
)
from .workload import (
    WorkloadSpec, builtin_workload_spec, generate_workload, make_correlated_dataset,
)

__version__ = "0.1.0"
