"""Steering feedback: deterministic diagnostic rules run after result
production, returned in the response side-channel.

Five kinds: why_not (which filter conjunct emptied the result, with
nearby values), cost_warning (estimate over threshold plus a concrete
tightening suggestion), related_table (join candidates by column name
and value overlap), batching_hint (repeated sub-plans across
consecutive single-query probes), cache_notice (formatted from the
optimizer's cache decisions).

All rules are read-only and template-generated, so identical state and
probe yield identical feedback.  A wall-clock budget caps total time
spent; rules that would start past the budget are skipped.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .approx import execute_sampled
from .planner import (
    AggregateNode,
    AndPred,
    Comparison,
    FilterNode,
    InPred,
    JoinNode,
    LikePred,
    OtherNode,
    ProjectNode,
    ScanNode,
    SemanticLikePred,
    estimate_cost,
    iter_nodes,
)
from .relational.types import FLOAT64, INT64, value_to_text
from .similarity import similarity

DIAGNOSIS_SAMPLE_FRACTION = 0.1
SUGGESTED_VALUE_LIMIT = 5
RELATED_TABLE_THRESHOLD = 0.3
RELATED_TABLE_LIMIT = 3
RELATED_SAMPLE_VALUES = 1000
BATCHING_RUN_LENGTH = 3
DEFAULT_BUDGET_MS = 50.0
DEFAULT_COST_THRESHOLD = 100_000.0


@dataclass
class Feedback:
    kind: str  # why_not | cost_warning | related_table | cache_notice | batching_hint
    message: str
    target_qid: Optional[str] = None
    payload: dict = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "kind": self.kind,
            "target_qid": self.target_qid,
            "message": self.message,
            "payload": self.payload,
        }


# ------------------------------------------------------------- rebuilds


def _rebuild(node, new_children):
    if node.kind == "TS":
        return node
    if node.kind == "FI":
        return FilterNode(node.predicate, new_children[0])
    if node.kind == "PR":
        return ProjectNode(list(node.output), new_children[0])
    if node.kind == "HJ":
        return JoinNode(node.left_key, node.right_key, new_children[0], new_children[1])
    if node.kind == "UA":
        return AggregateNode(list(node.group), list(node.aggs), new_children[0])
    return OtherNode(node.op, node.payload, new_children[0])


def _conjuncts_of(pred):
    return list(pred.parts) if isinstance(pred, AndPred) else [pred]


def enumerate_conjuncts(plan):
    """All filter conjuncts in plan pre-order (canonical within a node)."""
    out = []
    for node in iter_nodes(plan):
        if node.kind == "FI":
            out.extend(_conjuncts_of(node.predicate))
    return out


def _remove_conjunct(node, target_index: int, counter: list):
    """Copy of the plan with the target_index-th conjunct dropped."""
    if node.kind == "FI":
        kept = []
        for part in _conjuncts_of(node.predicate):
            if counter[0] != target_index:
                kept.append(part)
            counter[0] += 1
        child = _remove_conjunct(node.children[0], target_index, counter)
        if not kept:
            return child
        pred = kept[0] if len(kept) == 1 else AndPred(tuple(kept))
        return FilterNode(pred, child)
    children = [_remove_conjunct(c, target_index, counter) for c in node.children]
    return _rebuild(node, children)


def _primary_ref(pred):
    refs = sorted(pred.refs(), key=lambda r: r.text)
    return refs[0] if refs else None


def _literal_of(pred):
    if isinstance(pred, Comparison):
        return pred.value
    if isinstance(pred, LikePred):
        return pred.pattern.replace("%", "").replace("_", "")
    if isinstance(pred, InPred):
        return pred.values[0] if pred.values else None
    if isinstance(pred, SemanticLikePred):
        return pred.phrase
    return None


def diagnose_empty_result(plan, catalog, qid: Optional[str] = None) -> Optional[Feedback]:
    """Name the filter conjunct whose removal makes rows appear.

    Runs on a deterministic 10% sample seeded from the plan
    fingerprint.  Conjuncts are tried one at a time in plan order; the
    first removal that yields rows is the culprit.  Suggested values
    are the column's closest distinct values to the predicate literal
    by trigram similarity.
    """
    conjuncts = enumerate_conjuncts(plan)
    if not conjuncts:
        return None
    seed = plan.fingerprint_value & 0x7FFFFFFF
    culprit = None
    for idx, conjunct in enumerate(conjuncts):
        modified = _remove_conjunct(plan, idx, [0])
        res = execute_sampled(modified, catalog, DIAGNOSIS_SAMPLE_FRACTION, seed)
        if res.rows:
            culprit = conjunct
            break
    if culprit is None:
        return None

    ref = _primary_ref(culprit)
    payload = {"conjunct": culprit.canonical(), "column": ref.text if ref else None}
    suggested = []
    if ref is not None:
        stats = catalog.column_stats(ref.table).get(ref.column)
        literal = _literal_of(culprit)
        if stats is not None and literal is not None:
            needle = value_to_text(literal) or ""
            scored = []
            for value in stats.distinct_sample:
                text = value_to_text(value)
                if text is None:
                    continue
                score = similarity(needle, text)
                if score > 0.0:
                    scored.append((-score, text, value))
            scored.sort(key=lambda t: (t[0], t[1]))
            suggested = [v for _, _, v in scored[:SUGGESTED_VALUE_LIMIT]]
        col_type = catalog.schema_of(ref.table).col_type(ref.column)
        if stats is not None and col_type in (INT64, FLOAT64):
            payload["observed_range"] = {
                "min": stats.min_text,
                "max": stats.max_text,
            }
    payload["suggested_values"] = suggested
    hint = ""
    if suggested:
        hint = "; closest values: " + ", ".join(
            value_to_text(v) or "" for v in suggested
        )
    message = (
        f"no rows matched; removing {payload['conjunct']} yields rows{hint}"
    )
    return Feedback("why_not", message, target_qid=qid, payload=payload)


# --------------------------------------------------------- cost warning


def _tighten_column(node, ref):
    """Copy of the plan where every conjunct on ref becomes an equality."""
    if node.kind == "FI":
        parts = []
        for part in _conjuncts_of(node.predicate):
            if ref in part.refs():
                parts.append(Comparison(ref, "=", 0))
            else:
                parts.append(part)
        child = _tighten_column(node.children[0], ref)
        pred = parts[0] if len(parts) == 1 else AndPred(tuple(parts))
        return FilterNode(pred, child)
    children = [_tighten_column(c, ref) for c in node.children]
    rebuilt = _rebuild(node, children)
    return rebuilt


def _add_filter_above_scan(node, ref):
    if node.kind == "TS":
        if node.table == ref.table:
            return FilterNode(Comparison(ref, "=", 0), node)
        return node
    children = [_add_filter_above_scan(c, ref) for c in node.children]
    return _rebuild(node, children)


def cost_feedback(
    plan, catalog, threshold: float = DEFAULT_COST_THRESHOLD, qid: Optional[str] = None
) -> Optional[Feedback]:
    """Warn when the cost estimate crosses the threshold.

    The suggestion is the single column whose tightening (to an
    equality-grade filter) most reduces the estimate; filtered columns
    are tried first, otherwise every scanned column is a candidate.
    Ties break on the column's qualified name.
    """
    base = estimate_cost(plan, catalog)
    if base.total_cost <= threshold:
        return None

    filtered_refs = set()
    scanned_tables = []
    for node in iter_nodes(plan):
        if node.kind == "FI":
            filtered_refs.update(node.predicate.refs())
        elif node.kind == "TS":
            scanned_tables.append(node.table)

    candidates = []
    if filtered_refs:
        for ref in filtered_refs:
            candidates.append((ref, _tighten_column(plan, ref)))
    else:
        from .planner import ColumnRef

        for table in scanned_tables:
            for col in catalog.schema_of(table).columns:
                ref = ColumnRef(table, col.name)
                candidates.append((ref, _add_filter_above_scan(plan, ref)))

    best = None
    for ref, modified in candidates:
        after = estimate_cost(modified, catalog).total_cost
        reduction = base.total_cost - after
        key = (-reduction, ref.text)
        if best is None or key < best[0]:
            best = (key, ref, after)

    payload = {"estimated_cost": base.total_cost, "threshold": threshold}
    message = f"estimated cost {base.total_cost:.0f} exceeds {threshold:.0f}"
    if best is not None and -best[0][0] > 0:
        _, ref, after = best
        payload["suggested_column"] = ref.text
        payload["estimated_cost_after"] = after
        message += f"; tightening the filter on {ref.text} would cut it to {after:.0f}"
    return Feedback("cost_warning", message, target_qid=qid, payload=payload)


# -------------------------------------------------------- related tables


def suggest_related_tables(scope_tables, catalog) -> Optional[Feedback]:
    """Rank join candidates for the tables in scope.

    Score per candidate = max over (scope column, candidate column)
    pairs of name trigram similarity times sampled value-overlap
    Jaccard.  Emitted only when the best candidate scores at least
    RELATED_TABLE_THRESHOLD.
    """
    scope = [t for t in scope_tables if catalog.has_table(t)]
    if not scope:
        return None
    scope_set = set(scope)
    candidates = [t for t in catalog.tables() if t not in scope_set]

    def sample_texts(table, column):
        stats = catalog.column_stats(table).get(column)
        if stats is None:
            return frozenset()
        vals = stats.distinct_sample[:RELATED_SAMPLE_VALUES]
        return frozenset(value_to_text(v) for v in vals if v is not None)

    ranked = []
    for cand in candidates:
        best = 0.0
        best_pair = None
        cand_cols = list(catalog.schema_of(cand).columns)
        for st in scope:
            for scol in catalog.schema_of(st).columns:
                s_sample = None
                for ccol in cand_cols:
                    name_score = similarity(scol.name, ccol.name)
                    if name_score == 0.0:
                        continue
                    if s_sample is None:
                        s_sample = sample_texts(st, scol.name)
                    c_sample = sample_texts(cand, ccol.name)
                    if not s_sample or not c_sample:
                        continue
                    overlap = len(s_sample & c_sample) / len(s_sample | c_sample)
                    score = name_score * overlap
                    if score > best:
                        best = score
                        best_pair = (f"{st}.{scol.name}", f"{cand}.{ccol.name}")
        if best > 0.0:
            ranked.append((best, cand, best_pair))
    ranked.sort(key=lambda t: (-t[0], t[1]))
    if not ranked or ranked[0][0] < RELATED_TABLE_THRESHOLD:
        return None
    top = ranked[:RELATED_TABLE_LIMIT]
    payload = {
        "tables": [
            {"table": t, "score": round(s, 6), "via": list(pair)}
            for s, t, pair in top
        ]
    }
    names = ", ".join(t for _, t, _ in top)
    return Feedback(
        "related_table", f"related tables worth joining: {names}", payload=payload
    )


# ---------------------------------------------------------- batching hint


def batching_hint(history) -> Optional[Feedback]:
    """Suggest batching when consecutive single-query probes share work.

    history: the agent's recent probe records, oldest first, each with
    n_queries and a subplan fingerprint -> cost map.
    """
    if len(history) < BATCHING_RUN_LENGTH:
        return None
    recent = list(history)[-BATCHING_RUN_LENGTH:]
    if any(rec.n_queries != 1 for rec in recent):
        return None
    shared = set(recent[0].subplan_costs)
    for rec in recent[1:]:
        shared &= set(rec.subplan_costs)
    if not shared:
        return None
    latest = recent[-1].subplan_costs
    shared_fps = sorted(shared, key=lambda fp: (-latest[fp], fp))
    saving = latest[shared_fps[0]] * (BATCHING_RUN_LENGTH - 1)
    payload = {
        "shared_fingerprints": shared_fps,
        "estimated_saving": saving,
    }
    message = (
        f"last {BATCHING_RUN_LENGTH} probes repeat shared sub-plans; batching "
        f"them would save about {saving:.0f} row-touches"
    )
    return Feedback("batching_hint", message, payload=payload)


def make_cache_notice(qid: str, fact_key: str, reason: str) -> Feedback:
    return Feedback(
        "cache_notice",
        f"answered from cached result {fact_key}",
        target_qid=qid,
        payload={"fact_key": fact_key, "reason": reason},
    )


# ----------------------------------------------------------- orchestrator


@dataclass
class FeedbackConfig:
    enabled: bool = True
    budget_ms: Optional[float] = DEFAULT_BUDGET_MS
    cost_threshold: float = DEFAULT_COST_THRESHOLD


def generate_feedback(
    config: FeedbackConfig,
    catalog,
    plans: dict,
    empty_qids,
    agent_history,
) -> list:
    """Run the post-execution rules under the wall-clock budget.

    plans: qid -> canonical plan for executed queries, in response
    order.  empty_qids: qids whose exact/sampled result had no rows.
    """
    if not config.enabled:
        return []
    start = time.monotonic()

    def over_budget():
        if config.budget_ms is None:
            return False
        return (time.monotonic() - start) * 1000.0 > config.budget_ms

    out = []
    for qid in empty_qids:
        if over_budget():
            return out
        fb = diagnose_empty_result(plans[qid], catalog, qid=qid)
        if fb is not None:
            out.append(fb)
    for qid, plan in plans.items():
        if over_budget():
            return out
        fb = cost_feedback(plan, catalog, config.cost_threshold, qid=qid)
        if fb is not None:
            out.append(fb)
    if not over_budget():
        scope = sorted(
            {n.table for plan in plans.values() for n in iter_nodes(plan) if n.kind == "TS"}
        )
        fb = suggest_related_tables(scope, catalog)
        if fb is not None:
            out.append(fb)
    if not over_budget():
        fb = batching_hint(agent_history)
        if fb is not None:
            out.append(fb)
    return out
