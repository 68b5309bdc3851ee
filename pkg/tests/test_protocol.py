"""Wire document parsing: strictness, error codes, round trips."""

import json

import pytest

from probekernel.errors import ProbeFormatError
from probekernel.protocol import (
    PHASE_ACCURACY,
    parse_criterion,
    parse_probe,
    probe_to_doc,
)

from fuzz_docs import fuzz_case

VALID = {
    "probe_id": "p1",
    "agent_id": "a1",
    "principal": "analyst",
    "turn": 3,
    "kind": "sql_batch",
    "queries": [{"qid": "q1", "sql": "SELECT t.id FROM t", "accuracy": "exact"}],
    "brief": {"phase": "full_solution", "goal": "demo"},
}

# Stable machine-readable vocabulary; clients branch on these.
PARSE_CODES = {
    "bad_accuracy", "bad_agent_id", "bad_branch_op", "bad_branch_ref", "bad_brief",
    "bad_criterion", "bad_goal", "bad_k_of_n", "bad_k_range", "bad_kind",
    "bad_pairwise", "bad_principal", "bad_priority", "bad_probe_id", "bad_qid",
    "bad_queries", "bad_query", "bad_sql", "bad_termination", "bad_turn", "dangling_qid",
    "duplicate_group_qid", "duplicate_qid", "duplicate_termination",
    "locate_empty_phrase", "locate_with_queries", "malformed_json",
    "missing_brief_field", "missing_field", "missing_query_field", "not_object",
    "unexpected_target", "unknown_brief_field", "unknown_field", "unknown_phase",
    "unknown_query_field",
}


def doc(**over):
    d = json.loads(json.dumps(VALID))
    d.update(over)
    return d


def code_of(bad) -> str:
    with pytest.raises(ProbeFormatError) as exc:
        parse_probe(bad)
    assert exc.value.code in PARSE_CODES
    return exc.value.code


# ------------------------------------------------------------ acceptance


def test_parse_accepts_dict_str_and_bytes():
    for raw in (VALID, json.dumps(VALID), json.dumps(VALID).encode()):
        p = parse_probe(raw)
        assert p.probe_id == "p1"
        assert p.queries[0].sql == "SELECT t.id FROM t"


def test_round_trip_through_doc():
    original = doc()
    original["brief"]["termination"] = [{"qid": "q1", "criterion": "rowcount >= 5"}]
    original["brief"]["k_of_n"] = []
    p = parse_probe(original)
    again = parse_probe(probe_to_doc(p))
    assert probe_to_doc(again) == probe_to_doc(p)


def test_accuracy_defaults_by_phase():
    for phase, expect in PHASE_ACCURACY.items():
        d = doc(brief={"phase": phase, "goal": "g"})
        d["queries"] = [{"qid": "q1", "sql": "SELECT t.id FROM t"}]
        p = parse_probe(d)
        assert p.queries[0].accuracy == expect


def test_explicit_accuracy_wins_over_phase():
    d = doc(brief={"phase": "metadata_exploration", "goal": "g"})
    d["queries"] = [{"qid": "q1", "sql": "SELECT t.id FROM t", "accuracy": 0.7}]
    assert parse_probe(d).queries[0].accuracy == 0.7


# ------------------------------------------------------------- rejections


def test_every_missing_top_key_is_rejected():
    for key in VALID:
        d = doc()
        del d[key]
        assert code_of(d) in {"missing_field", "bad_kind"}


def test_unknown_top_key_rejected():
    assert code_of(doc(extra=1)) == "unknown_field"


def test_unknown_query_key_rejected():
    d = doc()
    d["queries"][0]["surprise"] = 1
    assert code_of(d) == "unknown_query_field"


def test_unknown_brief_key_rejected():
    d = doc()
    d["brief"]["surprise"] = 1
    assert code_of(d) == "unknown_brief_field"


@pytest.mark.parametrize(
    "accuracy", [0, 0.0, -0.5, 1.5, "high", True, [], {}]
)
def test_bad_accuracy_rejected(accuracy):
    d = doc()
    d["queries"][0]["accuracy"] = accuracy
    assert code_of(d) == "bad_accuracy"


def test_duplicate_qid_rejected():
    d = doc()
    d["queries"] = [
        {"qid": "q1", "sql": "SELECT t.id FROM t"},
        {"qid": "q1", "sql": "SELECT t.id FROM t"},
    ]
    assert code_of(d) == "duplicate_qid"


def test_malformed_json_and_non_object():
    assert code_of(b"{nope") == "malformed_json"
    assert code_of(b"\xff\xfe") == "malformed_json"
    assert code_of(b"[1, 2]") == "not_object"
    assert code_of(b'"probe"') == "not_object"


def test_unknown_phase_rejected():
    d = doc(brief={"phase": "exploring", "goal": "g"})
    assert code_of(d) == "unknown_phase"


def test_bad_turn_rejected():
    assert code_of(doc(turn=-1)) == "bad_turn"
    assert code_of(doc(turn="3")) == "bad_turn"
    assert code_of(doc(turn=True)) == "bad_turn"


def test_locate_must_have_goal_and_no_queries():
    d = doc(kind="locate")
    assert code_of(d) == "locate_with_queries"
    d = doc(kind="locate", queries=[])
    d["brief"]["goal"] = ""
    assert code_of(d) == "locate_empty_phrase"


def test_k_of_n_validation():
    d = doc()
    d["queries"] = [
        {"qid": "q1", "sql": "SELECT t.id FROM t"},
        {"qid": "q2", "sql": "SELECT t.id FROM t"},
    ]
    d["brief"]["k_of_n"] = [{"k": 3, "qids": ["q1", "q2"]}]
    assert code_of(d) == "bad_k_range"
    d["brief"]["k_of_n"] = [{"k": 1, "qids": ["q1", "zz"]}]
    assert code_of(d) == "dangling_qid"
    d["brief"]["k_of_n"] = [{"k": 1}]
    assert code_of(d) == "bad_k_of_n"


def test_branch_op_validation():
    base = {
        "probe_id": "b1", "agent_id": "a1", "principal": "analyst",
        "turn": 1, "kind": "branch_op", "op": "fork",
    }
    p = parse_probe(base)
    assert p.op == "fork" and p.branch is None

    bad = dict(base, op="detach")
    assert code_of(bad) == "bad_branch_op"
    bad = dict(base, target=3)  # target only makes sense for merge
    assert code_of(bad) == "unexpected_target"
    bad = dict(base, branch="zero")
    assert code_of(bad) == "bad_branch_ref"
    bad = dict(base, queries=[])
    assert code_of(bad) == "unknown_field"


# ------------------------------------------------------------- criteria


def test_parse_criterion_forms():
    c = parse_criterion("rowcount >= 5")
    assert (c.metric, c.comparator, c.literal) == ("rowcount", ">=", 5.0)
    c = parse_criterion("jaccard_to(abc123) >= 0.9")
    assert c.metric == "jaccard_to"
    assert c.arg == "abc123"
    assert c.literal == 0.9
    c = parse_criterion("mean(amount) < 12.5")
    assert (c.metric, c.arg, c.comparator, c.literal) == ("mean", "amount", "<", 12.5)


@pytest.mark.parametrize(
    "text",
    ["", "rowcount", "rowcount >=", "rowcount >= x", "entropy >= 5",
     "rowcount ~ 5", "rowcount >= 5 extra", "jaccard_to() >= 0.9"],
)
def test_bad_criterion_rejected(text):
    d = doc()
    d["brief"]["termination"] = [{"qid": "q1", "criterion": text}]
    assert code_of(d) == "bad_criterion"


def test_termination_for_unknown_qid_rejected():
    d = doc()
    d["brief"]["termination"] = [{"qid": "zz", "criterion": "rowcount >= 5"}]
    assert code_of(d) == "dangling_qid"


# ----------------------------------------------------------------- fuzz


def test_fuzz_parse_never_raises_unexpected_exceptions():
    ok = rejected = 0
    for seed in range(3000):
        case = fuzz_case(seed)
        try:
            parse_probe(case)
            ok += 1
        except ProbeFormatError as exc:
            assert exc.code in PARSE_CODES, exc.code
            rejected += 1
    # the generator must exercise both sides of the contract
    assert ok > 100 and rejected > 100
