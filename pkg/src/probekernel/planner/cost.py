"""Heuristic cost estimation over logical plans.

Costs are row-touches: every node contributes the cardinality of its
input(s), with scans contributing the exact table row count.  Output
cardinalities come from fixed selectivity constants, so estimates are
deterministic for a given catalog state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .nodes import (
    AggregateNode,
    AndPred,
    Comparison,
    FilterNode,
    InPred,
    JoinNode,
    LikePred,
    OrPred,
    OtherNode,
    PlanNode,
    ProjectNode,
    ScanNode,
    SemanticLikePred,
)

EQUALITY_SELECTIVITY = 0.1
RANGE_SELECTIVITY = 0.3
LIKE_SELECTIVITY = 0.25


def predicate_selectivity(pred) -> float:
    """Fixed-constant selectivity: equality 0.1, range 0.3, LIKE-ish 0.25;
    conjunctions multiply, disjunctions add with a cap of 1."""
    if isinstance(pred, Comparison):
        return EQUALITY_SELECTIVITY if pred.op == "=" else RANGE_SELECTIVITY
    if isinstance(pred, (LikePred, SemanticLikePred)):
        return LIKE_SELECTIVITY
    if isinstance(pred, InPred):
        return min(1.0, EQUALITY_SELECTIVITY * len(pred.values))
    if isinstance(pred, AndPred):
        s = 1.0
        for p in pred.parts:
            s *= predicate_selectivity(p)
        return s
    if isinstance(pred, OrPred):
        return min(1.0, sum(predicate_selectivity(p) for p in pred.parts))
    raise TypeError(f"unknown predicate {pred!r}")


@dataclass
class CostEstimate:
    node_rows: dict = field(default_factory=dict)  # node -> estimated output rows
    total_cost: float = 0.0  # row-touches summed over all nodes

    def rows(self, node: PlanNode) -> float:
        return self.node_rows[node]


def estimate_cost(plan: PlanNode, catalog) -> CostEstimate:
    est = CostEstimate()
    _walk(plan, catalog, est)
    return est


def _walk(node: PlanNode, catalog, est: CostEstimate) -> float:
    if isinstance(node, ScanNode):
        rows = float(catalog.row_count(node.table))
        est.total_cost += rows  # the scan touches every stored row
        est.node_rows[node] = rows
        return rows
    child_rows = [_walk(c, catalog, est) for c in node.children]
    est.total_cost += sum(child_rows)
    if isinstance(node, FilterNode):
        rows = child_rows[0] * predicate_selectivity(node.predicate)
    elif isinstance(node, JoinNode):
        nd = max(
            catalog.n_distinct(node.left_key.table, node.left_key.column),
            catalog.n_distinct(node.right_key.table, node.right_key.column),
            1,
        )
        rows = child_rows[0] * child_rows[1] / nd
    elif isinstance(node, AggregateNode):
        if not node.group:
            rows = 1.0 if child_rows[0] > 0 else 0.0
        else:
            groups = 1.0
            for r in node.group:
                groups *= max(catalog.n_distinct(r.table, r.column), 1)
            rows = min(child_rows[0], groups)
    elif isinstance(node, ProjectNode):
        rows = child_rows[0]
    elif isinstance(node, OtherNode):
        if node.op == "limit":
            rows = min(child_rows[0], float(node.payload))
        else:  # sort and distinct keep the cardinality estimate
            rows = child_rows[0]
    else:
        raise TypeError(f"unknown node {node!r}")
    est.node_rows[node] = rows
    return rows
