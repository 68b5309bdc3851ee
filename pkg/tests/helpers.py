"""Shared builders for engine and probe documents."""

from __future__ import annotations

import itertools
import json

from probekernel.config import build_engine, validate_config

_seq = itertools.count(1)


def make_engine(db, **overrides):
    cfg = {"feedback_budget_ms": None}  # unbounded: feedback must be deterministic
    cfg.update(overrides)
    return build_engine(db, validate_config(cfg))


def probe_doc(
    queries,
    *,
    probe_id=None,
    agent_id="t-agent",
    principal="analyst",
    turn=None,
    kind="sql_batch",
    phase="full_solution",
    goal="test probe",
    brief_extra=None,
):
    n = next(_seq)
    brief = {"phase": phase, "goal": goal}
    if brief_extra:
        brief.update(brief_extra)
    return {
        "probe_id": probe_id or f"p{n}",
        "agent_id": agent_id,
        "principal": principal,
        "turn": turn if turn is not None else n,
        "kind": kind,
        "queries": queries,
        "brief": brief,
    }


def sql_q(qid, sql, **extra):
    q = {"qid": qid, "sql": sql}
    q.update(extra)
    return q


def send(engine, doc):
    resp = engine.handle_wire(json.dumps(doc))
    assert "error" not in resp, resp
    return resp


def send_raw(engine, doc):
    return engine.handle_wire(json.dumps(doc))


def outcome_of(resp, qid):
    for o in resp["outcomes"]:
        if o.get("qid") == qid:
            return o
    raise AssertionError(f"qid {qid!r} missing from {resp['outcomes']}")


def rows_of(resp, qid):
    return [tuple(r) for r in outcome_of(resp, qid)["result"]["rows"]]


def branch_op(op, *, branch=None, target=None, agent_id="t-agent", turn=None):
    n = next(_seq)
    doc = {
        "probe_id": f"b{n}",
        "agent_id": agent_id,
        "principal": "analyst",
        "turn": turn if turn is not None else n,
        "kind": "branch_op",
        "op": op,
    }
    if branch is not None:
        doc["branch"] = branch
    if target is not None:
        doc["target"] = target
    return doc
