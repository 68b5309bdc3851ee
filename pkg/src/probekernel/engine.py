"""The probe engine: one object that takes wire documents and returns
response documents.

Per probe it parses and canonicalizes the SQL, asks the optimizer what
to run, executes with a shared per-batch memo, applies phase policy
(sampling fractions, metadata row caps), early-terminates streamable
queries against their criteria, records results as memory facts,
generates steering feedback, and appends a trace record.

Branch operations (fork, rollback, merge) act on the agent's session:
a fork moves the session onto the child branch, a rollback back onto
the parent, a merge onto the target.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from .approx import execute_incremental, execute_sampled, is_streamable
from .branching import BranchManager
from .errors import (
    BranchError,
    MergeConflict,
    ProbeFormatError,
    ProbeKernelError,
    SchemaError,
    SqlError,
    TerminationError,
    TypeMismatchError,
)
from .feedback import FeedbackConfig, generate_feedback, make_cache_notice
from .memory import MemoryFact, MemoryStore
from .optimizer import AdvisorState, optimize_batch
from .planner import canonicalize, enumerate_subplans, locate, parse_sql
from .planner.locate import VALID_SCOPES
from .protocol import (
    PHASE_ROW_CAP,
    BranchOp,
    error_doc,
    evaluate_termination,
    parse_probe,
    probe_to_doc,
)
from .relational.database import MAIN_BRANCH, VIRTUAL_TABLES, BranchCatalog, Database
from .relational.executor import Counters, execute_plan
from .relational.types import ResultSet, value_to_text

log = logging.getLogger("probekernel.engine")

FACT_VALUE_SET_CAP = 10_000
LOCATE_LIMIT = 20


@dataclass
class AgentSession:
    agent_id: str
    principal: str
    last_turn: int = -1
    current_branch: int = MAIN_BRANCH
    probe_ids: set = field(default_factory=set)


class _Materialization:
    __slots__ = ("node", "rows", "versions")

    def __init__(self, node, rows, versions):
        self.node = node
        self.rows = rows
        self.versions = versions


class ProbeEngine:
    def __init__(
        self,
        db: Database,
        memory_log: Optional[str] = None,
        trace_path: Optional[str] = None,
        enable_memory: bool = True,
        enable_feedback: bool = True,
        enable_sharing: bool = True,
        feedback_budget_ms: Optional[float] = 50.0,
        cost_threshold: float = 100_000.0,
        admission_row_budget: float = 5_000_000.0,
        checkpoint_rows: int = 1024,
        base_seed: int = 0,
        manifest=None,  # one task manifest dict, or a list of them
    ):
        self.db = db
        self.branches = BranchManager(db)
        self.memory = MemoryStore(db, log_path=memory_log)
        self.advisor = AdvisorState()
        self.sessions: dict = {}
        self.trace: list = []
        self.trace_path = trace_path
        self.enable_memory = enable_memory
        self.enable_feedback = enable_feedback
        self.enable_sharing = enable_sharing
        self.feedback_config = FeedbackConfig(
            enabled=enable_feedback,
            budget_ms=feedback_budget_ms,
            cost_threshold=cost_threshold,
        )
        self.admission_row_budget = admission_row_budget
        self.checkpoint_rows = checkpoint_rows
        self.base_seed = base_seed
        self.manifest = manifest
        self.materialized: dict = {}  # fp hex -> _Materialization
        self._lock = threading.Lock()
        self._dispatch_lock = threading.RLock()

    # ------------------------------------------------------------ sessions

    def _session(self, agent_id: str, principal: str) -> AgentSession:
        with self._lock:
            sess = self.sessions.get(agent_id)
            if sess is None:
                sess = AgentSession(agent_id, principal)
                self.sessions[agent_id] = sess
            return sess

    # --------------------------------------------------------------- entry

    def handle_wire(self, raw) -> dict:
        """One wire document in, one response document out.

        Safe to call from several connection threads: parsing is pure
        and dispatch is serialized, so concurrent sessions stay
        isolated without finer locking in the stores.
        """
        try:
            parsed = parse_probe(raw)
        except ProbeFormatError as exc:
            return error_doc(exc.code, exc.message)
        with self._dispatch_lock:
            return self._dispatch(parsed)

    def _dispatch(self, parsed) -> dict:
        try:
            sess = self._session(parsed.agent_id, parsed.principal)
            if parsed.probe_id in sess.probe_ids:
                return error_doc(
                    "duplicate_probe_id",
                    f"probe_id {parsed.probe_id!r} already seen",
                    probe_id=parsed.probe_id,
                )
            if parsed.turn <= sess.last_turn:
                return error_doc(
                    "turn_not_monotonic",
                    f"turn {parsed.turn} not after {sess.last_turn}",
                    probe_id=parsed.probe_id,
                )
            sess.probe_ids.add(parsed.probe_id)
            sess.last_turn = parsed.turn
            if isinstance(parsed, BranchOp):
                return self._handle_branch_op(parsed, sess)
            if parsed.kind == "locate":
                return self._handle_locate(parsed, sess)
            return self._handle_sql_batch(parsed, sess)
        except MergeConflict as exc:
            return error_doc("merge_conflict", str(exc), probe_id=parsed.probe_id)
        except BranchError as exc:
            return error_doc("branch_error", str(exc), probe_id=parsed.probe_id)
        except SqlError as exc:
            return error_doc("sql_error", str(exc), probe_id=parsed.probe_id)
        except TypeMismatchError as exc:
            return error_doc("type_error", str(exc), probe_id=parsed.probe_id)
        except SchemaError as exc:
            return error_doc("schema_error", str(exc), probe_id=parsed.probe_id)
        except TerminationError as exc:
            return error_doc("termination_error", str(exc), probe_id=parsed.probe_id)
        except ProbeKernelError as exc:
            return error_doc("engine_error", str(exc), probe_id=parsed.probe_id)

    # --------------------------------------------------------- branch ops

    def _handle_branch_op(self, op: BranchOp, sess: AgentSession) -> dict:
        stats: dict = {"op": op.op}
        if op.op == "fork":
            parent = op.branch if op.branch is not None else sess.current_branch
            child = self.branches.fork(parent)
            sess.current_branch = child
            stats.update({"branch": child, "parent": parent})
        elif op.op == "rollback":
            target = op.branch if op.branch is not None else sess.current_branch
            parent = self.db.branch(target).parent_id
            self.branches.rollback(target)
            sess.current_branch = parent if parent is not None else MAIN_BRANCH
            stats.update({"branch": sess.current_branch, "rolled_back": target})
        else:  # merge
            source = op.branch if op.branch is not None else sess.current_branch
            target = op.target if op.target is not None else MAIN_BRANCH
            report = self.branches.merge(source, target)
            sess.current_branch = target
            stats.update({"branch": target})
            stats.update(report.to_wire())
        self._record_trace(op, sess, {}, Counters(), [], "branch_op", {})
        return {
            "probe_id": op.probe_id,
            "outcomes": [],
            "feedback": [],
            "stats": stats,
        }

    # -------------------------------------------------------------- locate

    def _handle_locate(self, probe, sess: AgentSession) -> dict:
        catalog = BranchCatalog(self.db, sess.current_branch)
        phrase = probe.brief.goal
        matches = locate(phrase, catalog, VALID_SCOPES, limit=LOCATE_LIMIT)
        outcome = {
            "qid": None,
            "status": "ok",
            "matches": [m.to_wire() for m in matches],
        }
        self._record_trace(probe, sess, {}, Counters(), [], "metadata_exploration", {})
        return {
            "probe_id": probe.probe_id,
            "outcomes": [outcome],
            "feedback": [],
            "stats": {
                "branch": sess.current_branch,
                "executed_operator_count": 0,
                "cache_hit_operator_count": 0,
            },
        }

    # ----------------------------------------------------------- sql batch

    def _handle_sql_batch(self, probe, sess: AgentSession) -> dict:
        from .reporting import classify_activity

        catalog = BranchCatalog(self.db, sess.current_branch)
        plans: dict = {}
        failed: dict = {}
        for query in probe.queries:
            try:
                plans[query.qid] = canonicalize(parse_sql(query.sql, catalog))
            except (SqlError, SchemaError, TypeMismatchError) as exc:
                code = {
                    SqlError: "sql_error",
                    SchemaError: "schema_error",
                    TypeMismatchError: "type_error",
                }[type(exc)]
                failed[query.qid] = {
                    "qid": query.qid,
                    "status": "error",
                    "code": code,
                    "message": str(exc),
                }

        slim = self._drop_failed(probe, failed)
        activity = classify_activity(slim, plans, self.manifest)

        # memory grounds facts in mainline data only; probes running on
        # a branch neither read nor write facts, so a branch write can
        # never be shadowed by a stale mainline answer
        on_mainline = sess.current_branch == MAIN_BRANCH
        decision = optimize_batch(
            [slim],
            plans,
            self.memory if (self.enable_memory and on_mainline) else None,
            self.advisor,
            catalog,
            admission_row_budget=self.admission_row_budget,
            share=self.enable_sharing,
        )
        log.info("decision %s", json.dumps({"probe_id": probe.probe_id, "trace": decision.trace}))

        counters = Counters()
        memo: Optional[dict] = {} if self.enable_sharing else None
        if memo is not None:
            self._seed_memo(memo, catalog)

        criteria = {rule.qid: rule.criterion for rule in slim.brief.termination}
        row_cap = PHASE_ROW_CAP.get(slim.brief.phase)
        outcomes: dict = dict(failed)
        result_rows: dict = {}
        executed_plans: dict = {}
        warnings_by_qid: dict = {}

        for qid in decision.order:
            entry = decision.entries[qid]
            plan = plans[qid]
            executed_plans[qid] = plan
            if entry.action == "execute_sampled":
                outcomes[qid], rows = self._run_sampled(
                    probe, qid, plan, catalog, entry.fraction, counters, row_cap
                )
            else:
                outcomes[qid], rows = self._run_exact(
                    probe, qid, plan, catalog, criteria.get(qid), memo, counters, row_cap
                )
            result_rows[qid] = rows

        cache_notices = []
        for query in slim.queries:
            qid = query.qid
            if qid in outcomes:
                continue
            entry = decision.entries[qid]
            if entry.action == "answer_from_cache":
                plan = plans[qid]
                rows = memo.get(plan.fingerprint_value) if memo is not None else None
                if rows is None:
                    outcomes[qid], rows = self._run_exact(
                        probe, qid, plan, catalog, None, memo, counters, row_cap
                    )
                else:
                    counters.cache_hit_operator_count += plan.size
                    outcomes[qid] = self._ok_outcome(
                        qid, plan, rows, catalog, exact=True, row_cap=row_cap
                    )
                result_rows[qid] = rows
                executed_plans[qid] = plan
                cache_notices.append(
                    make_cache_notice(qid, entry.fact_key, entry.reason or "")
                )
            elif entry.action == "pruned":
                doc = {"qid": qid, "status": "pruned", "reason": entry.reason}
                if entry.fact_key:
                    doc["fact_key"] = entry.fact_key
                outcomes[qid] = doc
            elif entry.action == "deferred":
                outcomes[qid] = {
                    "qid": qid,
                    "status": "deferred",
                    "reason": entry.reason,
                }

        if self.enable_memory and on_mainline:
            self._write_facts(probe, slim, plans, decision, result_rows, outcomes, catalog, activity)
        self._store_materializations(decision, plans, memo, catalog)

        feedback = list(cache_notices)
        if self.enable_feedback:
            empty_qids = [
                qid
                for qid in decision.order
                if outcomes[qid].get("status") == "ok" and not result_rows.get(qid)
            ]
            feedback.extend(
                generate_feedback(
                    self.feedback_config,
                    catalog,
                    {qid: plans[qid] for qid in executed_plans},
                    empty_qids,
                    self.advisor.agent_history(probe.agent_id),
                )
            )

        ordered_outcomes = [outcomes[q.qid] for q in probe.queries]
        response = {
            "probe_id": probe.probe_id,
            "outcomes": ordered_outcomes,
            "feedback": [fb.to_wire() for fb in feedback],
            "stats": {
                "branch": sess.current_branch,
                "executed_operator_count": counters.executed_operator_count,
                "cache_hit_operator_count": counters.cache_hit_operator_count,
                "activity": activity,
            },
        }
        self._record_trace(
            probe, sess, plans, counters, [fb.kind for fb in feedback], activity, outcomes
        )
        return response

    # ------------------------------------------------------------ helpers

    def _drop_failed(self, probe, failed: dict):
        """Probe copy without the queries that failed to parse."""
        if not failed:
            return probe
        live = tuple(q for q in probe.queries if q.qid not in failed)
        live_ids = {q.qid for q in live}
        brief = probe.brief
        groups = []
        for group in brief.k_of_n:
            qids = tuple(q for q in group.qids if q in live_ids)
            if qids:
                groups.append(replace(group, k=min(group.k, len(qids)), qids=qids))
        termination = tuple(r for r in brief.termination if r.qid in live_ids)
        pairwise = tuple(
            (a, b)
            for a, b in brief.pairwise_priorities
            if a in live_ids and b in live_ids
        )
        return replace(
            probe,
            queries=live,
            brief=replace(
                brief,
                k_of_n=tuple(groups),
                termination=termination,
                pairwise_priorities=pairwise,
            ),
        )

    def _seed_memo(self, memo: dict, catalog):
        for fp_hex, mat in self.materialized.items():
            fresh = all(
                catalog.has_table(t) and catalog.table_version(t) == v
                for t, v in mat.versions.items()
            )
            if fresh:
                memo[mat.node.fingerprint_value] = mat.rows

    def _sampling_seed(self, probe, qid: str) -> int:
        from .planner import fnv1a_64

        raw = fnv1a_64(f"{self.base_seed}:{probe.probe_id}:{qid}")
        return raw & 0x7FFFFFFFFFFFFFFF

    def _source_versions(self, plan, catalog) -> dict:
        out = {}
        for node, _ in enumerate_subplans(plan):
            if node.kind == "TS":
                name, version = catalog.source_version_entry(node.table)
                out[name] = version
        return out

    def _ok_outcome(self, qid, plan, rows, catalog, exact, row_cap, estimates=None, warnings=None, sample_fraction=None):
        shown = rows if row_cap is None else rows[:row_cap]
        rs = ResultSet(
            columns=tuple((c.name, c.ctype) for c in plan.output),
            rows=[tuple(r) for r in shown],
            exact=exact,
            source_version=self._source_versions(plan, catalog),
        )
        doc = {"qid": qid, "status": "ok", "result": rs.to_wire()}
        if estimates:
            doc["estimates"] = [e.to_wire() for e in estimates]
        if sample_fraction is not None:
            doc["sample_fraction"] = sample_fraction
        if warnings:
            doc["warnings"] = list(warnings)
        if row_cap is not None and len(rows) > row_cap:
            doc["row_cap"] = row_cap
        return doc

    def _run_exact(self, probe, qid, plan, catalog, criterion, memo, counters, row_cap):
        if criterion is not None and is_streamable(plan):
            principal = probe.principal
            memory = self.memory if self.enable_memory else None

            def stop_when(partial):
                return evaluate_termination(criterion, partial, memory, principal)

            outcome = execute_incremental(
                plan, catalog, stop_when, checkpoint_rows=self.checkpoint_rows
            )
            counters.executed_operator_count += plan.size
            if outcome.terminated_early:
                doc = self._ok_outcome(
                    qid, plan, outcome.rows, catalog, exact=False, row_cap=row_cap,
                    warnings=outcome.warnings,
                )
                doc["terminated_early"] = True
                return doc, outcome.rows
            if memo is not None:
                memo.setdefault(plan.fingerprint_value, outcome.rows)
            doc = self._ok_outcome(
                qid, plan, outcome.rows, catalog, exact=True, row_cap=row_cap,
                warnings=outcome.warnings,
            )
            return doc, outcome.rows
        rows = execute_plan(plan, catalog, memo=memo, counters=counters)
        doc = self._ok_outcome(qid, plan, rows, catalog, exact=True, row_cap=row_cap)
        return doc, rows

    def _run_sampled(self, probe, qid, plan, catalog, fraction, counters, row_cap):
        seed = self._sampling_seed(probe, qid)
        res = execute_sampled(plan, catalog, fraction, seed)
        counters.executed_operator_count += plan.size
        doc = self._ok_outcome(
            qid,
            plan,
            res.rows,
            catalog,
            exact=res.exact,
            row_cap=row_cap,
            estimates=res.agg_estimates,
            warnings=res.warnings,
            sample_fraction=res.sample_fraction,
        )
        return doc, res.rows

    # -------------------------------------------------------- memory writes

    def _write_facts(self, probe, slim, plans, decision, result_rows, outcomes, catalog, activity):
        for query in slim.queries:
            qid = query.qid
            entry = decision.entries.get(qid)
            if entry is None or entry.action != "execute_exact":
                continue
            if outcomes[qid].get("status") != "ok" or not outcomes[qid]["result"]["exact"]:
                continue
            plan = plans[qid]
            rows = result_rows[qid]
            versions = self._source_versions(plan, catalog)
            values = set()
            for row in rows:
                for v in row:
                    if v is not None:
                        values.add(v)
                if len(values) >= FACT_VALUE_SET_CAP:
                    break
            value_list = sorted(values, key=lambda v: (value_to_text(v) or ""))
            fact = MemoryFact(
                fact_key=f"{plan.fingerprint_value:016x}",
                kind="probe_result",
                scope=tuple((t,) for t in sorted(versions)),
                content={
                    "columns": [c.name for c in plan.output],
                    "rowcount": len(rows),
                    "value_set": value_list[:FACT_VALUE_SET_CAP],
                },
                note=f"{plan.canonical_text} goal:{slim.brief.goal}",
                data_versions=versions,
                created_by=probe.agent_id,
                principal=probe.principal,
                created_turn=probe.turn,
            )
            self.memory.put_fact(fact)

        scans_catalog = any(
            node.kind == "TS" and node.table in VIRTUAL_TABLES
            for plan in plans.values()
            for node, _ in enumerate_subplans(plan)
        )
        if scans_catalog:
            existing = self.memory.by_key("schema_summary", probe.principal)
            if existing is None or existing.stale:
                tables = {
                    t: catalog.row_count(t) for t in catalog.tables()
                }
                self.memory.put_fact(
                    MemoryFact(
                        fact_key="schema_summary",
                        kind="schema_summary",
                        scope=(("__catalog__",),),
                        content={"tables": tables},
                        note="tables and row counts " + " ".join(sorted(tables)),
                        data_versions={"__catalog__": self.db.catalog_version(catalog.branch_id)},
                        created_by=probe.agent_id,
                        principal=probe.principal,
                        created_turn=probe.turn,
                    )
                )

        if activity == "column_statistics":
            base_tables = {
                node.table
                for plan in plans.values()
                for node, _ in enumerate_subplans(plan)
                if node.kind == "TS" and node.table not in VIRTUAL_TABLES
            }
            if len(base_tables) == 1:
                table = next(iter(base_tables))
                key = f"colstats:{table}"
                existing = self.memory.by_key(key, probe.principal)
                if existing is None or existing.stale:
                    sample = {}
                    for qid, rows in result_rows.items():
                        if outcomes[qid].get("status") == "ok":
                            sample[qid] = {
                                "columns": [c.name for c in plans[qid].output],
                                "rows": [list(r) for r in rows[:100]],
                            }
                    self.memory.put_fact(
                        MemoryFact(
                            fact_key=key,
                            kind="column_stats",
                            scope=((table,),),
                            content={"table": table, "results": sample},
                            note=f"column statistics for {table}",
                            data_versions={table: catalog.table_version(table)},
                            created_by=probe.agent_id,
                            principal=probe.principal,
                            created_turn=probe.turn,
                        )
                    )

    def _store_materializations(self, decision, plans, memo, catalog):
        if memo is None or not decision.materialization_orders:
            return
        for fp_hex in decision.materialization_orders:
            node = decision.shared_dag.get(fp_hex)
            if node is None:
                continue
            rows = memo.get(node.fingerprint_value)
            if rows is None:
                continue
            versions = {}
            ok = True
            for sub, _ in enumerate_subplans(node):
                if sub.kind == "TS":
                    if sub.table in VIRTUAL_TABLES:
                        ok = False  # catalog views are cheap; never materialized
                        break
                    versions[sub.table] = catalog.table_version(sub.table)
            if not ok:
                continue
            self.materialized[fp_hex] = _Materialization(node, rows, versions)
            self.advisor.mark_materialized(fp_hex, versions)

    # --------------------------------------------------------------- trace

    def _record_trace(self, probe, sess, plans, counters, feedback_kinds, activity, outcomes):
        summary = {}
        for qid, doc in outcomes.items():
            summary[qid] = {
                "status": doc.get("status"),
                "reason": doc.get("reason"),
                "rows": len(doc["result"]["rows"]) if "result" in doc else None,
            }
        record = {
            "turn": probe.turn,
            "agent_id": probe.agent_id,
            "probe_id": probe.probe_id,
            "kind": getattr(probe, "kind", "branch_op"),
            "probe": probe_to_doc(probe),
            "activity": activity,
            "branch": sess.current_branch,
            "executed_operator_count": counters.executed_operator_count,
            "cache_hit_operator_count": counters.cache_hit_operator_count,
            "feedback_kinds": list(feedback_kinds),
            "outcomes": summary,
            "plans": {qid: plan.canonical_text for qid, plan in plans.items()},
            "subplans": {
                qid: [
                    [f"{n.fingerprint_value:016x}", size, n.kind]
                    for n, size in enumerate_subplans(plan)
                ]
                for qid, plan in plans.items()
            },
        }
        self.trace.append(record)
        if self.trace_path:
            with open(self.trace_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        return record
