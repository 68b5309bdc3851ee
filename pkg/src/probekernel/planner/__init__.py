"""SQL parsing, logical plans, canonical fingerprints, cost and similarity probes."""

from .nodes import (
    AggSpec,
    AndPred,
    ColumnRef,
    Comparison,
    Fingerprint,
    InPred,
    LikePred,
    OrPred,
    OutCol,
    PlanNode,
    Predicate,
    ScanNode,
    SemanticLikePred,
    FilterNode,
    ProjectNode,
    JoinNode,
    AggregateNode,
    OtherNode,
    canonicalize,
    canonicalize_predicate,
    enumerate_subplans,
    fingerprint,
    fnv1a_64,
    iter_nodes,
    literal_text,
    subexpression_stats,
    SubplanStats,
    Bucket,
)
from .parser import parse_sql
from .cost import CostEstimate, estimate_cost
from .locate import LocateMatch, locate

__all__ = [
    "AggSpec",
    "AndPred",
    "ColumnRef",
    "Comparison",
    "Fingerprint",
    "InPred",
    "LikePred",
    "OrPred",
    "OutCol",
    "PlanNode",
    "Predicate",
    "SemanticLikePred",
    "canonicalize_predicate",
    "ScanNode",
    "FilterNode",
    "ProjectNode",
    "JoinNode",
    "AggregateNode",
    "OtherNode",
    "canonicalize",
    "enumerate_subplans",
    "fingerprint",
    "fnv1a_64",
    "iter_nodes",
    "literal_text",
    "subexpression_stats",
    "SubplanStats",
    "Bucket",
    "parse_sql",
    "CostEstimate",
    "estimate_cost",
    "LocateMatch",
    "locate",
]
