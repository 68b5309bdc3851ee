"""Probe wire protocol: document schemas, strict parsing, termination DSL.

One UTF-8 JSON document per probe, newline-delimited when streamed.
Three kinds: `sql_batch` (queries + brief), `locate` (zero queries, the
search phrase rides in brief.goal), and `branch_op` (fork/rollback/
merge).  Parsing is strict: unknown keys, missing keys, and every
malformed field are rejected, each with its own stable error code so
callers can tell exactly what they got wrong.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import ProbeFormatError, TerminationError

PHASES = (
    "metadata_exploration",
    "column_statistics",
    "partial_solution",
    "full_solution",
)

# Default accuracy by phase: coarse answers while exploring, exact while
# solving.  Filled in at parse time when a query omits accuracy.
PHASE_ACCURACY = {
    "metadata_exploration": 0.05,
    "column_statistics": 0.2,
    "partial_solution": 0.5,
    "full_solution": "exact",
}

# Row cap applied to sampled metadata peeks.
PHASE_ROW_CAP = {"metadata_exploration": 100}

PROBE_KINDS = ("sql_batch", "locate", "branch_op")

_TOP_KEYS = ("probe_id", "agent_id", "principal", "turn", "kind", "queries", "brief")
_QUERY_KEYS = ("qid", "sql", "accuracy", "priority")
_BRIEF_KEYS = ("phase", "goal", "k_of_n", "termination", "pairwise_priorities")
_BRANCH_KEYS = ("probe_id", "agent_id", "principal", "turn", "kind", "op", "branch", "target")

METRICS = ("rowcount", "min", "max", "mean", "stddev", "jaccard_to")
COMPARATORS = ("<=", ">=", "<", ">", "=")


@dataclass(frozen=True)
class TerminationCriterion:
    metric: str  # rowcount | min | max | mean | stddev | jaccard_to
    arg: Optional[str]  # column name, or fact key for jaccard_to
    comparator: str
    literal: float

    def text(self) -> str:
        m = self.metric if self.arg is None else f"{self.metric}({self.arg})"
        lit = repr(self.literal) if isinstance(self.literal, float) else str(self.literal)
        return f"{m} {self.comparator} {lit}"


@dataclass(frozen=True)
class TerminationRule:
    qid: str
    criterion: TerminationCriterion


@dataclass(frozen=True)
class KofN:
    k: int
    qids: tuple


@dataclass(frozen=True)
class Brief:
    phase: str
    goal: str = ""
    k_of_n: tuple = ()
    termination: tuple = ()
    pairwise_priorities: tuple = ()


@dataclass(frozen=True)
class ProbeQuery:
    qid: str
    sql: str
    accuracy: Union[str, float]  # "exact" or fraction in (0, 1]
    priority: int = 0


@dataclass(frozen=True)
class Probe:
    probe_id: str
    agent_id: str
    principal: str
    turn: int
    kind: str  # sql_batch | locate
    queries: tuple
    brief: Brief


@dataclass(frozen=True)
class BranchOp:
    probe_id: str
    agent_id: str
    principal: str
    turn: int
    op: str  # fork | rollback | merge
    branch: Optional[int] = None  # defaults to the session's current branch
    target: Optional[int] = None  # merge only; defaults to mainline


# ------------------------------------------------------------------ parsing


def _fail(code: str, message: str):
    raise ProbeFormatError(code, message)


def _get_str(doc, key, code):
    v = doc.get(key)
    if not isinstance(v, str) or not v:
        _fail(code, f"{key} must be a non-empty string")
    return v


def parse_probe(wire) -> Union[Probe, BranchOp]:
    """Validate one wire document; raises ProbeFormatError on any defect."""
    if isinstance(wire, (bytes, bytearray)):
        try:
            wire = wire.decode("utf-8")
        except UnicodeDecodeError:
            _fail("malformed_json", "document is not valid UTF-8")
    if isinstance(wire, str):
        try:
            doc = json.loads(wire)
        except json.JSONDecodeError as exc:
            _fail("malformed_json", f"document is not valid JSON: {exc}")
    else:
        doc = wire
    if not isinstance(doc, dict):
        _fail("not_object", "document must be a JSON object")

    kind = doc.get("kind")
    if kind is None:
        _fail("missing_field", "kind is required")
    if not isinstance(kind, str) or kind not in PROBE_KINDS:
        _fail("bad_kind", f"kind must be one of {', '.join(PROBE_KINDS)}")

    if kind == "branch_op":
        return _parse_branch_op(doc)

    for key in doc:
        if key not in _TOP_KEYS:
            _fail("unknown_field", f"unknown top-level key {key!r}")
    for key in _TOP_KEYS:
        if key not in doc:
            _fail("missing_field", f"{key} is required")

    probe_id = _get_str(doc, "probe_id", "bad_probe_id")
    agent_id = _get_str(doc, "agent_id", "bad_agent_id")
    principal = _get_str(doc, "principal", "bad_principal")
    turn = doc["turn"]
    if isinstance(turn, bool) or not isinstance(turn, int) or turn < 0:
        _fail("bad_turn", "turn must be a non-negative integer")

    brief = _parse_brief(doc["brief"])
    queries = _parse_queries(doc["queries"], brief.phase)

    qids = {q.qid for q in queries}
    _check_refs(brief, qids)

    if kind == "locate":
        if queries:
            _fail("locate_with_queries", "locate probes carry zero queries")
        if not brief.goal.strip():
            _fail("locate_empty_phrase", "locate probes need a phrase in brief.goal")

    return Probe(probe_id, agent_id, principal, turn, kind, tuple(queries), brief)


def _parse_branch_op(doc) -> BranchOp:
    for key in doc:
        if key not in _BRANCH_KEYS:
            _fail("unknown_field", f"unknown top-level key {key!r}")
    for key in ("probe_id", "agent_id", "principal", "turn", "op"):
        if key not in doc:
            _fail("missing_field", f"{key} is required")
    probe_id = _get_str(doc, "probe_id", "bad_probe_id")
    agent_id = _get_str(doc, "agent_id", "bad_agent_id")
    principal = _get_str(doc, "principal", "bad_principal")
    turn = doc["turn"]
    if isinstance(turn, bool) or not isinstance(turn, int) or turn < 0:
        _fail("bad_turn", "turn must be a non-negative integer")
    op = doc["op"]
    if op not in ("fork", "rollback", "merge"):
        _fail("bad_branch_op", "op must be fork, rollback or merge")
    branch = doc.get("branch")
    if branch is not None and (isinstance(branch, bool) or not isinstance(branch, int) or branch < 0):
        _fail("bad_branch_ref", "branch must be a non-negative integer")
    target = doc.get("target")
    if target is not None:
        if op != "merge":
            _fail("unexpected_target", "target only applies to merge")
        if isinstance(target, bool) or not isinstance(target, int) or target < 0:
            _fail("bad_branch_ref", "target must be a non-negative integer")
    return BranchOp(probe_id, agent_id, principal, turn, op, branch, target)


def _parse_queries(raw, phase: str):
    if not isinstance(raw, list):
        _fail("bad_queries", "queries must be a list")
    queries = []
    seen = set()
    for item in raw:
        if not isinstance(item, dict):
            _fail("bad_query", "each query must be an object")
        for key in item:
            if key not in _QUERY_KEYS:
                _fail("unknown_query_field", f"unknown query key {key!r}")
        for key in ("qid", "sql"):
            if key not in item:
                _fail("missing_query_field", f"query {key} is required")
        qid = _get_str(item, "qid", "bad_qid")
        if qid in seen:
            _fail("duplicate_qid", f"duplicate qid {qid!r}")
        seen.add(qid)
        sql = _get_str(item, "sql", "bad_sql")
        accuracy = item.get("accuracy")
        if accuracy is None:
            accuracy = PHASE_ACCURACY[phase]
        elif accuracy != "exact":
            if (
                isinstance(accuracy, bool)
                or not isinstance(accuracy, (int, float))
                or not 0.0 < float(accuracy) <= 1.0
                or not math.isfinite(float(accuracy))
            ):
                _fail("bad_accuracy", "accuracy must be \"exact\" or a fraction in (0, 1]")
            accuracy = float(accuracy)
        priority = item.get("priority", 0)
        if isinstance(priority, bool) or not isinstance(priority, int):
            _fail("bad_priority", "priority must be an integer")
        queries.append(ProbeQuery(qid, sql, accuracy, priority))
    return queries


def _parse_brief(raw) -> Brief:
    if not isinstance(raw, dict):
        _fail("bad_brief", "brief must be an object")
    for key in raw:
        if key not in _BRIEF_KEYS:
            _fail("unknown_brief_field", f"unknown brief key {key!r}")
    if "phase" not in raw:
        _fail("missing_brief_field", "brief.phase is required")
    phase = raw["phase"]
    if not isinstance(phase, str) or phase not in PHASES:
        _fail("unknown_phase", f"phase must be one of {', '.join(PHASES)}")
    goal = raw.get("goal", "")
    if not isinstance(goal, str):
        _fail("bad_goal", "goal must be a string")

    groups = []
    for g in _expect_list(raw.get("k_of_n", []), "bad_k_of_n"):
        if not isinstance(g, dict) or set(g) != {"k", "qids"}:
            _fail("bad_k_of_n", "each group needs exactly the keys k and qids")
        qids = g["qids"]
        if not isinstance(qids, list) or not all(isinstance(q, str) and q for q in qids):
            _fail("bad_k_of_n", "group qids must be non-empty strings")
        if len(set(qids)) != len(qids):
            _fail("duplicate_group_qid", "group qids must be distinct")
        k = g["k"]
        if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= len(qids):
            _fail("bad_k_range", "k must satisfy 1 <= k <= len(qids)")
        groups.append(KofN(k, tuple(qids)))

    rules = []
    seen_term = set()
    for t in _expect_list(raw.get("termination", []), "bad_termination"):
        if not isinstance(t, dict) or set(t) != {"qid", "criterion"}:
            _fail("bad_termination", "each rule needs exactly the keys qid and criterion")
        qid = t["qid"]
        if not isinstance(qid, str) or not qid:
            _fail("bad_termination", "rule qid must be a non-empty string")
        if qid in seen_term:
            _fail("duplicate_termination", f"multiple criteria for qid {qid!r}")
        seen_term.add(qid)
        if not isinstance(t["criterion"], str):
            _fail("bad_criterion", "criterion must be a string")
        rules.append(TerminationRule(qid, parse_criterion(t["criterion"])))

    pairs = []
    for p in _expect_list(raw.get("pairwise_priorities", []), "bad_pairwise"):
        if (
            not isinstance(p, list)
            or len(p) != 2
            or not all(isinstance(x, str) and x for x in p)
            or p[0] == p[1]
        ):
            _fail("bad_pairwise", "each pair must be [qid_a, qid_b] with distinct qids")
        pairs.append((p[0], p[1]))

    return Brief(phase, goal, tuple(groups), tuple(rules), tuple(pairs))


def _expect_list(v, code):
    if not isinstance(v, list):
        _fail(code, "expected a list")
    return v


def _check_refs(brief: Brief, qids: set):
    for g in brief.k_of_n:
        for q in g.qids:
            if q not in qids:
                _fail("dangling_qid", f"k_of_n references unknown qid {q!r}")
    for r in brief.termination:
        if r.qid not in qids:
            _fail("dangling_qid", f"termination references unknown qid {r.qid!r}")
    for a, b in brief.pairwise_priorities:
        if a not in qids or b not in qids:
            _fail("dangling_qid", "pairwise_priorities references an unknown qid")


# --------------------------------------------------------- termination DSL


def parse_criterion(text: str) -> TerminationCriterion:
    """`metric comparator literal`, e.g. "rowcount >= 10" or
    "jaccard_to(abc123) >= 0.9"."""
    parts = text.split()
    if len(parts) != 3:
        _fail("bad_criterion", f"criterion must be 'metric comparator literal': {text!r}")
    metric_text, comparator, literal_text = parts
    if comparator not in COMPARATORS:
        _fail("bad_criterion", f"unknown comparator {comparator!r}")
    try:
        literal = float(literal_text)
    except ValueError:
        _fail("bad_criterion", f"literal must be a number: {literal_text!r}")
    if metric_text == "rowcount":
        return TerminationCriterion("rowcount", None, comparator, literal)
    if "(" in metric_text and metric_text.endswith(")"):
        name, _, rest = metric_text.partition("(")
        arg = rest[:-1]
        if name in ("min", "max", "mean", "stddev", "jaccard_to") and arg:
            return TerminationCriterion(name, arg, comparator, literal)
    _fail("bad_criterion", f"unknown metric {metric_text!r}")


_CMP = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "=": lambda a, b: a == b,
}


def evaluate_termination(criterion: TerminationCriterion, partial, memory, principal=None) -> bool:
    """Pure check of one criterion against a partial result snapshot.

    `memory` needs fact_value_set(fact_key, principal) for jaccard_to;
    pass None when no criterion uses it.  A metric that is not yet
    computable (empty column, single row for stddev) is simply not
    satisfied.  A missing column or fact is an error.
    """
    cmp = _CMP[criterion.comparator]
    m = criterion.metric
    if m == "rowcount":
        return cmp(partial.rowcount, criterion.literal)
    if m == "jaccard_to":
        if memory is None:
            raise TerminationError(f"no memory to resolve fact {criterion.arg!r}")
        stored = memory.fact_value_set(criterion.arg, principal)
        if stored is None:
            raise TerminationError(f"fact {criterion.arg!r} not found")
        mine = partial.value_set()
        if not mine and not stored:
            return cmp(1.0, criterion.literal)
        union = mine | stored
        j = len(mine & stored) / len(union) if union else 0.0
        return cmp(j, criterion.literal)

    idx = partial.column_index(criterion.arg)
    if idx is None:
        raise TerminationError(f"column {criterion.arg!r} not in the result")
    if m in ("min", "max"):
        v = partial.min_of(idx) if m == "min" else partial.max_of(idx)
        if v is None or isinstance(v, (str, bool)):
            if isinstance(v, (str, bool)):
                raise TerminationError(f"column {criterion.arg!r} is not numeric")
            return False
        return cmp(v, criterion.literal)
    moments = partial.moments(idx)
    if moments is None:
        raise TerminationError(f"column {criterion.arg!r} is not numeric")
    n, mean, m2 = moments
    if m == "mean":
        if n < 1:
            return False
        return cmp(mean, criterion.literal)
    # stddev: sample standard deviation, needs two values
    if n < 2:
        return False
    return cmp(math.sqrt(m2 / (n - 1)), criterion.literal)


# ------------------------------------------------------------ serialization


def serialize_probe(probe: Union[Probe, BranchOp]) -> str:
    return json.dumps(probe_to_doc(probe), separators=(",", ":"))


def probe_to_doc(probe: Union[Probe, BranchOp]) -> dict:
    if isinstance(probe, BranchOp):
        doc = {
            "probe_id": probe.probe_id,
            "agent_id": probe.agent_id,
            "principal": probe.principal,
            "turn": probe.turn,
            "kind": "branch_op",
            "op": probe.op,
        }
        if probe.branch is not None:
            doc["branch"] = probe.branch
        if probe.target is not None:
            doc["target"] = probe.target
        return doc
    return {
        "probe_id": probe.probe_id,
        "agent_id": probe.agent_id,
        "principal": probe.principal,
        "turn": probe.turn,
        "kind": probe.kind,
        "queries": [
            {"qid": q.qid, "sql": q.sql, "accuracy": q.accuracy, "priority": q.priority}
            for q in probe.queries
        ],
        "brief": {
            "phase": probe.brief.phase,
            "goal": probe.brief.goal,
            "k_of_n": [{"k": g.k, "qids": list(g.qids)} for g in probe.brief.k_of_n],
            "termination": [
                {"qid": r.qid, "criterion": r.criterion.text()}
                for r in probe.brief.termination
            ],
            "pairwise_priorities": [list(p) for p in probe.brief.pairwise_priorities],
        },
    }


def error_doc(code: str, message: str, probe_id: Optional[str] = None) -> dict:
    doc = {"error": {"code": code, "message": message}}
    if probe_id is not None:
        doc["probe_id"] = probe_id
    return doc
