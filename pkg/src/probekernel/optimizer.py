"""Batch optimizer: decides what runs, at what accuracy, and what is
answered from cache, pruned, or deferred.

The goal is satisficing: spend the least work that still gives each
query a decision-sufficient answer.  Rules applied per batch, in
order:

1. pairwise priority constraints raise sampling fractions to a
   fixpoint (a's fraction must be >= b's, exact counting as 1.0),
2. k-of-n groups keep the k cheapest members by estimated cost
   (lexicographic qid tie-break), the rest are pruned,
3. canonically equal duplicates collapse: the first in
   (-priority, qid) order executes, the rest answer from cache,
4. exact repeats of an already-answered plan (same agent, same data
   versions) are dropped as uninformative,
5. a query that only adds goal-irrelevant projection columns to
   another scheduled query is pruned as subsumed,
6. when the batch's exact workload exceeds the admission budget,
   sampled metadata queries are deferred.

k-of-n winners are locked: exactly k members of each group must hold
execute actions, so locked entries are exempt from rules 3 to 6.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .planner import enumerate_subplans, estimate_cost, iter_nodes
from .protocol import PHASE_ACCURACY
from .similarity import token_jaccard

MATERIALIZE_MIN_HITS = 3
MATERIALIZE_WINDOW_TURNS = 20
MATERIALIZE_MIN_COST = 1000.0
SUBSUME_RELEVANCE_THRESHOLD = 0.1
DEFAULT_ADMISSION_ROW_BUDGET = 5_000_000.0
RING_CAPACITY = 32


@dataclass
class QueryDecision:
    qid: str
    action: str  # execute_exact | execute_sampled | answer_from_cache | pruned | deferred
    fraction: Optional[float] = None
    fact_key: Optional[str] = None
    reason: Optional[str] = None
    fingerprint: Optional[str] = None

    def is_execute(self) -> bool:
        return self.action in ("execute_exact", "execute_sampled")

    def to_trace(self) -> dict:
        return {
            "qid": self.qid,
            "action": self.action,
            "reason": self.reason,
            "fraction": self.fraction,
            "fingerprint": self.fingerprint,
        }


@dataclass
class ExecutionDecision:
    entries: dict  # qid -> QueryDecision
    order: list  # execute_* qids, higher priority first
    shared_dag: dict  # fingerprint hex -> canonical subplan node
    materialization_orders: list  # fingerprint hexes to persist
    trace: list = field(default_factory=list)


class _FpStat:
    __slots__ = ("hit_turns", "estimated_cost", "materialized", "source_versions")

    def __init__(self):
        self.hit_turns: deque = deque()
        self.estimated_cost = 0.0
        self.materialized = False
        self.source_versions: dict = {}


class _ProbeRecord:
    __slots__ = ("turn", "n_queries", "root_fps", "subplan_costs")

    def __init__(self, turn, n_queries, root_fps, subplan_costs):
        self.turn = turn
        self.n_queries = n_queries
        self.root_fps = root_fps  # list of fingerprint hexes
        self.subplan_costs = subplan_costs  # fp hex -> estimated cost


class AdvisorState:
    """Materialization history plus per-agent recent-probe ring buffers."""

    def __init__(self):
        self.fp_stats: dict = {}  # fp hex -> _FpStat
        self.rings: dict = {}  # agent_id -> deque of _ProbeRecord
        self._lock = threading.Lock()

    def record_probe(self, agent_id: str, record: _ProbeRecord):
        with self._lock:
            ring = self.rings.setdefault(agent_id, deque(maxlen=RING_CAPACITY))
            ring.append(record)

    def agent_history(self, agent_id: str):
        return list(self.rings.get(agent_id, ()))

    def seen_by_agent(self, agent_id: str, fp_hex: str) -> bool:
        return any(fp_hex in rec.root_fps for rec in self.rings.get(agent_id, ()))

    def mark_materialized(self, fp_hex: str, source_versions: dict):
        with self._lock:
            stat = self.fp_stats.setdefault(fp_hex, _FpStat())
            stat.materialized = True
            stat.source_versions = dict(source_versions)

    def invalidate(self, fp_hex: str):
        with self._lock:
            if fp_hex in self.fp_stats:
                self.fp_stats[fp_hex] = _FpStat()


def advise_materialization(
    advisor: AdvisorState, fp_hex: str, cost: float, turn: int
) -> bool:
    """Record one observation of a sub-plan and say whether to persist it.

    True iff this fingerprint was hit at least MATERIALIZE_MIN_HITS
    times within the trailing window and is expensive enough to be
    worth keeping.
    """
    with advisor._lock:
        stat = advisor.fp_stats.setdefault(fp_hex, _FpStat())
        stat.hit_turns.append(turn)
        stat.estimated_cost = cost
        cutoff = turn - MATERIALIZE_WINDOW_TURNS
        while stat.hit_turns and stat.hit_turns[0] <= cutoff:
            stat.hit_turns.popleft()
        if stat.materialized:
            return False
        return (
            len(stat.hit_turns) >= MATERIALIZE_MIN_HITS
            and stat.estimated_cost >= MATERIALIZE_MIN_COST
        )


def _as_fraction(accuracy) -> float:
    if accuracy == "exact" or accuracy is None:
        return 1.0
    return float(accuracy)


def _strip_root_project(plan):
    """(projection keys or None, the subtree below the root projection)."""
    if plan.kind == "PR":
        return [c.key for c in plan.output], plan.children[0]
    return None, plan


def prune_subsumed(plan_p, plan_q, goal: str):
    """True iff plan_q is plan_p plus only goal-irrelevant extra columns.

    Both plans must be canonical.  plan_q qualifies when stripping the
    root projections leaves identical subtrees, q's projection is a
    strict superset of p's, and every extra column's name has token
    Jaccard < SUBSUME_RELEVANCE_THRESHOLD against the goal text.
    """
    p_cols, p_rest = _strip_root_project(plan_p)
    q_cols, q_rest = _strip_root_project(plan_q)
    if p_cols is None or q_cols is None:
        return False
    if p_rest.fingerprint_value != q_rest.fingerprint_value:
        return False
    if not set(q_cols) > set(p_cols):
        return False
    for key in set(q_cols) - set(p_cols):
        name = key.split(".")[-1]
        if token_jaccard(name, goal) >= SUBSUME_RELEVANCE_THRESHOLD:
            return False
    return True


def drop_uninformative_followup(probe, qid: str, fp_hex: str, advisor, memory):
    """fact_key of a fresh prior answer to the identical plan, else None."""
    if memory is None or advisor is None:
        return None
    if not advisor.seen_by_agent(probe.agent_id, fp_hex):
        return None
    fact = memory.by_key(fp_hex, probe.principal)
    if fact is None or fact.stale or fact.kind != "probe_result":
        return None
    return fact.fact_key


def optimize_batch(
    probes,
    plans,
    memory,
    advisor,
    catalog,
    admission_row_budget: float = DEFAULT_ADMISSION_ROW_BUDGET,
    share: bool = True,
) -> ExecutionDecision:
    """Decide per-qid actions for one batch.

    probes: list of parsed Probe objects (qids unique across the batch).
    plans: qid -> canonical plan.  share=False turns off duplicate
    collapsing, for measuring what sharing buys.
    """
    items = []  # (probe, query, plan)
    for probe in probes:
        for query in probe.queries:
            items.append((probe, query, plans[query.qid]))

    costs = {}
    for _, query, plan in items:
        costs[query.qid] = estimate_cost(plan, catalog).total_cost

    # pairwise accuracy constraints, raised to a fixpoint
    frac = {q.qid: _as_fraction(q.accuracy) for _, q, _ in items}
    pairs = [(a, b) for probe, _, _ in items for a, b in probe.brief.pairwise_priorities]
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            if frac[a] < frac[b]:
                frac[a] = frac[b]
                changed = True

    entries: dict = {}
    locked = set()

    # k-of-n: keep the k cheapest per group, prune the rest
    for probe, _, _ in items:
        for group in probe.brief.k_of_n:
            ranked = sorted(group.qids, key=lambda q: (costs[q], q))
            for qid in ranked[: group.k]:
                locked.add(qid)
            for qid in ranked[group.k :]:
                entries[qid] = QueryDecision(
                    qid, "pruned", reason="k_of_n_unselected"
                )

    # in-batch dedup by canonical fingerprint
    ordered = sorted(
        (it for it in items if it[1].qid not in entries),
        key=lambda it: (-it[1].priority, it[1].qid),
    )
    first_for_fp: dict = {}
    if share:
        for probe, query, plan in ordered:
            fp_hex = f"{plan.fingerprint_value:016x}"
            if query.qid in locked:
                first_for_fp.setdefault(fp_hex, query.qid)
                continue
            winner = first_for_fp.setdefault(fp_hex, query.qid)
            if winner != query.qid:
                entries[query.qid] = QueryDecision(
                    query.qid,
                    "answer_from_cache",
                    fact_key=fp_hex,
                    reason=f"duplicate_of({winner})",
                    fingerprint=fp_hex,
                )

    # uninformative repeats across turns
    for probe, query, plan in ordered:
        if query.qid in entries or query.qid in locked:
            continue
        fp_hex = f"{plan.fingerprint_value:016x}"
        prior = drop_uninformative_followup(probe, query.qid, fp_hex, advisor, memory)
        if prior is not None:
            entries[query.qid] = QueryDecision(
                query.qid,
                "pruned",
                reason="no_new_information",
                fact_key=prior,
                fingerprint=fp_hex,
            )

    # subsumption: plan_q = plan_p + irrelevant extra projection columns
    open_items = [it for it in ordered if it[1].qid not in entries]
    for probe_q, query_q, plan_q in open_items:
        if query_q.qid in entries or query_q.qid in locked:
            continue
        for probe_p, query_p, plan_p in ordered:
            if query_p.qid == query_q.qid or query_p.qid in entries:
                continue
            if probe_p is not probe_q:
                continue
            if prune_subsumed(plan_p, plan_q, probe_q.brief.goal):
                entries[query_q.qid] = QueryDecision(
                    query_q.qid,
                    "pruned",
                    reason=f"subsumed_by({query_p.qid})",
                    fingerprint=f"{plan_q.fingerprint_value:016x}",
                )
                break

    # admission control: heavy exact work defers sampled metadata queries
    exact_rows = sum(
        costs[q.qid]
        for _, q, _ in items
        if q.qid not in entries and frac[q.qid] >= 1.0
    )
    if exact_rows > admission_row_budget:
        for probe, query, _ in items:
            if query.qid in entries or query.qid in locked:
                continue
            if probe.brief.phase == "metadata_exploration" and frac[query.qid] < 1.0:
                entries[query.qid] = QueryDecision(
                    query.qid, "deferred", reason="deferred_admission"
                )

    # everything left executes
    shared_dag: dict = {}
    for probe, query, plan in items:
        if query.qid in entries:
            continue
        fp_hex = f"{plan.fingerprint_value:016x}"
        f = frac[query.qid]
        if f >= 1.0:
            entries[query.qid] = QueryDecision(
                query.qid, "execute_exact", fraction=None, fingerprint=fp_hex
            )
        else:
            entries[query.qid] = QueryDecision(
                query.qid, "execute_sampled", fraction=f, fingerprint=fp_hex
            )
        for node in iter_nodes(plan):
            shared_dag.setdefault(f"{node.fingerprint_value:016x}", node)

    order = [
        qid
        for _, q, _ in sorted(items, key=lambda it: (-it[1].priority, it[1].qid))
        for qid in (q.qid,)
        if entries[qid].is_execute()
    ]

    # materialization advice over exact executed sub-plans
    materialization_orders = []
    if advisor is not None:
        seen_fps = set()
        turn = max((p.turn for p, _, _ in items), default=0)
        for probe, query, plan in items:
            entry = entries[query.qid]
            if entry.action != "execute_exact":
                continue
            for node, _size in enumerate_subplans(plan):
                fp_hex = f"{node.fingerprint_value:016x}"
                if fp_hex in seen_fps:
                    continue
                seen_fps.add(fp_hex)
                sub_cost = estimate_cost(node, catalog).total_cost
                if advise_materialization(advisor, fp_hex, sub_cost, turn):
                    materialization_orders.append(fp_hex)

        for probe in probes:
            root_fps = []
            subplan_costs: dict = {}
            for query in probe.queries:
                plan = plans[query.qid]
                root_fps.append(f"{plan.fingerprint_value:016x}")
                for node, _size in enumerate_subplans(plan):
                    hex_fp = f"{node.fingerprint_value:016x}"
                    if hex_fp not in subplan_costs:
                        subplan_costs[hex_fp] = estimate_cost(node, catalog).total_cost
            advisor.record_probe(
                probe.agent_id,
                _ProbeRecord(probe.turn, len(probe.queries), root_fps, subplan_costs),
            )

    decision = ExecutionDecision(
        entries=entries,
        order=order,
        shared_dag=shared_dag,
        materialization_orders=materialization_orders,
    )
    decision.trace = [entries[q.qid].to_trace() for _, q, _ in items]
    return decision
