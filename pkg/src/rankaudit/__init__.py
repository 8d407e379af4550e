"""Group-fairness auditing for ranked recommendation outputs."""

__version__ = "0.1.0"

from .catalog import AttributeSchema, Dataset, load_dataset, write_dataset
from .dpso import InfoBase, SwarmConfig, run_dpso
from .estimators import BruteForceGroupAuditor, SwarmGroupAuditor, ThresholdGroupAuditor
from .exceptions import ConfigError, DataError, RankAuditError, SearchFailedError
from .groupspace import GroupIndex, SizeFilter, build_index
from .metrics import MetricId, UserMetricTable, compute_table
from .mitigation import MitigationPlan, evaluate_mitigation
from .report import FairnessReport, RunConfig, compare_engines, metric_correlation, run_test
from .search import SearchResult, brute_force_search, threshold_search
from .syngen import GroundTruth, SynConfig, generate

__all__ = [
    "AttributeSchema", "Dataset", "load_dataset", "write_dataset",
    "InfoBase", "SwarmConfig", "run_dpso",
    "BruteForceGroupAuditor", "SwarmGroupAuditor", "ThresholdGroupAuditor",
    "ConfigError", "DataError", "RankAuditError", "SearchFailedError",
    "GroupIndex", "SizeFilter", "build_index",
    "MetricId", "UserMetricTable", "compute_table",
    "MitigationPlan", "evaluate_mitigation",
    "FairnessReport", "RunConfig", "compare_engines", "metric_correlation", "run_test",
    "SearchResult", "brute_force_search", "threshold_search",
    "GroundTruth", "SynConfig", "generate",
]
