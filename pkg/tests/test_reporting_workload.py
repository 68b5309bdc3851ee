"""Activity classification, trace reports, and the synthetic workload
generators (dataset, tasks, scripted agents, why_not fixtures)."""

import filecmp
import json

import pytest

from probekernel.protocol import parse_probe
from probekernel.planner import canonicalize, parse_sql
from probekernel.relational.database import MAIN_BRANCH, BranchCatalog
from probekernel.reporting import (
    activity_counts_report,
    classify_activity,
    phases_report,
    redundancy_report,
)
from probekernel.workload import (
    SCALES,
    STATE_NAMES,
    gen_dataset,
    gen_tasks,
    gen_why_not_fixtures,
    load_dataset,
    load_tasks,
    parallel_probe,
    run_scripted,
    seed_hint_facts,
)

from helpers import make_engine, probe_doc, sql_q


# --------------------------------------------------------------- classifier


def _classified(small_db, sql, manifest=None, phase="partial_solution"):
    cat = BranchCatalog(small_db, MAIN_BRANCH)
    probe = parse_probe(probe_doc([sql_q("q", sql)], phase=phase))
    plans = {"q": canonicalize(parse_sql(sql, cat))}
    return classify_activity(probe, plans, manifest)


def test_catalog_scan_is_metadata(small_db):
    got = _classified(small_db, "SELECT name, n_rows FROM catalog_tables ORDER BY name")
    assert got == "metadata_exploration"


def test_small_limit_without_aggregate_is_metadata(small_db):
    assert _classified(small_db, "SELECT name FROM stores ORDER BY name LIMIT 5") == (
        "metadata_exploration"
    )
    # a big limit is not a peek
    assert _classified(small_db, "SELECT name FROM stores ORDER BY name LIMIT 500") == (
        "partial_solution"
    )


def test_single_column_distinct_is_column_stats(small_db):
    assert _classified(small_db, "SELECT DISTINCT state FROM sales") == "column_statistics"


def test_filter_refs_count_against_column_budget(small_db):
    # group key + filter column = 2 touched columns: still statistics
    two = _classified(
        small_db, "SELECT state, count(*) FROM sales WHERE amount > 50 GROUP BY state"
    )
    assert two == "column_statistics"
    # adding a third touched column tips it into solution work
    three = _classified(
        small_db,
        "SELECT state, avg(amount) FROM sales WHERE quantity > 5 GROUP BY state",
    )
    assert three == "partial_solution"


def test_join_is_never_column_stats(small_db):
    got = _classified(
        small_db,
        "SELECT stores.name, count(*) FROM sales JOIN stores "
        "ON sales.store_id = stores.store_id GROUP BY stores.name",
    )
    assert got == "partial_solution"


def test_manifest_match_is_full_solution(small_db):
    manifest = {
        "tables": ["sales"],
        "aggregates": ["avg(sales.amount)"],
        "group": ["sales.state"],
    }
    sql = "SELECT state, avg(amount) FROM sales WHERE quantity >= 1 GROUP BY state"
    assert _classified(small_db, sql, manifest) == "full_solution"
    # wrong aggregate: not this task's answer shape
    other = {
        "tables": ["sales"],
        "aggregates": ["sum(sales.amount)"],
        "group": ["sales.state"],
    }
    assert _classified(small_db, sql, other) == "partial_solution"


def test_manifest_list_any_match_counts(small_db):
    sql = "SELECT state, avg(amount) FROM sales WHERE quantity >= 1 GROUP BY state"
    manifests = [
        {"tables": ["orders"], "aggregates": ["count(*)"], "group": ["orders.status"]},
        {"tables": ["sales"], "aggregates": ["avg(sales.amount)"], "group": ["sales.state"]},
    ]
    assert _classified(small_db, sql, manifests) == "full_solution"


def test_probe_without_plans_defaults_to_partial(small_db):
    probe = parse_probe(probe_doc([sql_q("q", "SELECT broken FROM nope")]))
    assert classify_activity(probe, {}, None) == "partial_solution"


# ------------------------------------------------------------------ reports


def test_redundancy_report_hand_math():
    records = [
        {"subplans": {
            "q1": [["aa", 1, "TS"], ["bb", 2, "FI"]],
            "q2": [["aa", 1, "TS"], ["cc", 2, "FI"]],
        }},
        {"subplans": {
            "q": [["aa", 1, "TS"], ["bb", 2, "FI"], ["dd", 3, "UA"]],
        }},
    ]
    rep = redundancy_report(records)
    assert rep["mode"] == "redundancy"
    assert rep["by_size"]["1"] == {"total": 3, "distinct": 1, "distinct_fraction": 1 / 3}
    assert rep["by_size"]["2"] == {"total": 3, "distinct": 2, "distinct_fraction": 2 / 3}
    assert rep["by_size"]["3"] == {"total": 1, "distinct": 1, "distinct_fraction": 1.0}
    assert rep["by_kind"]["TS"]["total"] == 3
    assert rep["by_kind"]["TS"]["distinct"] == 1
    assert rep["by_kind"]["FI"]["distinct"] == 2
    assert rep["sizes_ge2"] == {"total": 4, "distinct": 3, "distinct_fraction": 0.75}


def test_redundancy_report_empty_subplans():
    rep = redundancy_report([{"subplans": {}}, {"kind": "branch_op"}])
    assert rep["sizes_ge2"] == {"total": 0, "distinct": 0, "distinct_fraction": 0.0}


def test_phases_report_bins_by_position():
    records = []
    script = (
        ["metadata_exploration"] * 3
        + ["column_statistics"] * 3
        + ["partial_solution"] * 2
        + ["full_solution"] * 2
    )
    for i, activity in enumerate(script):
        records.append({"agent_id": "a", "turn": i + 1, "activity": activity})
    records.append({"agent_id": "a", "turn": 99, "kind": "branch_op"})
    rep = phases_report(records)
    assert rep["bins"] == 10
    # 10 probes over 10 bins: one probe per bin, rows peak-normalized
    assert rep["matrix"]["metadata_exploration"] == [1.0, 1.0, 1.0] + [0.0] * 7
    assert rep["matrix"]["full_solution"] == [0.0] * 8 + [1.0, 1.0]


def test_activity_counts_means_and_deltas():
    run = [
        {"agent_id": "a", "turn": 1, "activity": "metadata_exploration"},
        {"agent_id": "a", "turn": 2, "activity": "full_solution"},
        {"agent_id": "b", "turn": 1, "activity": "full_solution"},
    ]
    base = [
        {"agent_id": "a", "turn": 1, "activity": "metadata_exploration"},
        {"agent_id": "a", "turn": 2, "activity": "metadata_exploration"},
        {"agent_id": "b", "turn": 1, "activity": "metadata_exploration"},
        {"agent_id": "b", "turn": 2, "activity": "full_solution"},
    ]
    rep = activity_counts_report(run, base)
    assert rep["mean_counts"]["metadata_exploration"] == 0.5
    assert rep["mean_counts"]["full_solution"] == 1.0
    assert rep["mean_counts"]["all_probes"] == 1.5
    assert rep["baseline_mean_counts"]["metadata_exploration"] == 1.5
    assert rep["delta_pct"]["metadata_exploration"] == pytest.approx(-66.666666, abs=1e-4)
    # baseline of zero yields no defined delta
    assert rep["delta_pct"]["column_statistics"] is None


# ------------------------------------------------------------------ dataset


def test_gen_dataset_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    gen_dataset(a, seed=7)
    gen_dataset(b, seed=7)
    names = ["manifest.json"] + [f"{t}.csv" for t in
             ("stores", "products", "customers", "sales", "orders", "interactions")]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []
    c = tmp_path / "c"
    gen_dataset(c, seed=8)
    _, diff, _ = filecmp.cmpfiles(a, c, ["sales.csv"], shallow=False)
    assert diff == ["sales.csv"]


def test_gen_dataset_small_row_counts(small_dir, small_db):
    cat = BranchCatalog(small_db, MAIN_BRANCH)
    assert cat.row_count("sales") == SCALES["small"] == 10_000
    assert cat.row_count("stores") == 40
    assert cat.row_count("products") == 200
    assert cat.row_count("customers") == 1_000
    assert cat.row_count("orders") == 3_000
    assert cat.row_count("interactions") == 2_000
    import pathlib

    manifest = json.loads((pathlib.Path(small_dir) / "manifest.json").read_text())
    assert manifest["tables"]["sales"]["rows"] == 10_000


def test_every_state_has_a_store(small_db):
    rows = small_db.scan_rows(MAIN_BRANCH, "stores")
    states = {r[2] for r in rows}
    assert states == set(STATE_NAMES)
    assert "California" in states


def test_bad_scale_rejected(tmp_path):
    with pytest.raises(ValueError, match="scale must be"):
        gen_dataset(tmp_path / "x", seed=0, scale="huge")


# -------------------------------------------------------------------- tasks


def test_tasks_have_variants_and_traps(tasks20):
    assert len(tasks20) == 20
    assert len({t.task_id for t in tasks20}) == 20
    for task in tasks20:
        assert len(task.variants) == 50
        assert task.base_table in task.tables
        assert task.trap_column.split(".")[0] in task.tables
        assert task.trap_bad != task.trap_good
        assert "{literal}" in task.partial_sql_template


def test_task_variants_share_the_core(small_db, tasks20):
    # the generator enforces >= 80%; verify independently for one task
    cat = BranchCatalog(small_db, MAIN_BRANCH)

    def core_fp(plan):
        node = plan
        while node.kind == "PR":
            node = node.children[0]
        return node.fingerprint_value

    task = tasks20[0]
    template_fp = core_fp(canonicalize(parse_sql(task.template, cat)))
    shared = sum(
        1
        for sql in task.variants
        if core_fp(canonicalize(parse_sql(sql, cat))) == template_fp
    )
    assert shared >= 0.8 * len(task.variants)


def test_task_round_trip_through_json(tmp_path, tasks20):
    path = tmp_path / "tasks.json"
    path.write_text(json.dumps([t.to_doc() for t in tasks20[:3]]))
    back = load_tasks(tmp_path)
    assert [t.to_doc() for t in back] == [t.to_doc() for t in tasks20[:3]]


def test_parallel_probe_carries_every_variant(tasks20):
    doc = parallel_probe(tasks20[0], "worker", turn=1)
    assert doc["probe_id"] == f"{tasks20[0].task_id}-parallel"
    assert len(doc["queries"]) == 50
    assert doc["queries"][0]["qid"] == "v00"
    assert doc["queries"][-1]["qid"] == "v49"
    assert all(q["accuracy"] == "exact" for q in doc["queries"])
    assert doc["brief"]["phase"] == "full_solution"


# --------------------------------------------------------------- scripted


def test_scripted_run_without_memory_discovers_the_hard_way(small_db, tasks20):
    engine = make_engine(small_db, enable_memory=False, enable_feedback=False)
    run = run_scripted(engine, tasks20[0], "agent0")
    # s1 s2 locate 2x stats bad-literal discover partial final
    assert run.probes == 9
    assert run.skipped == []
    assert len(run.responses) == run.probes


def test_scripted_run_with_feedback_skips_discovery(small_db, tasks20):
    engine = make_engine(small_db)
    run = run_scripted(engine, tasks20[0], "agent0")
    # why_not supplies the right literal, so the discover step is saved
    assert run.probes == 8
    assert run.skipped == []


def test_scripted_rerun_reuses_learned_facts(small_db, tasks20):
    engine = make_engine(small_db)
    first = run_scripted(engine, tasks20[0], "agent0")
    again = run_scripted(engine, tasks20[0], "agent1")
    assert first.probes == 8
    # schema, column stats, and the value format are all remembered
    assert again.probes == 3
    assert set(again.skipped) == {
        "catalog_tables",
        "catalog_columns",
        "stats_distinct",
        "stats_minmax",
        "bad_literal_probe",
    }


def test_seeded_hints_give_the_minimal_run(small_db, tasks20):
    engine = make_engine(small_db)
    seed_hint_facts(engine, tasks20)
    run = run_scripted(engine, tasks20[0], "agent0", with_hints=True)
    assert run.probes == 3
    assert len(run.skipped) == 5


# ----------------------------------------------------------- why_not pool


def test_why_not_fixtures_shape(small_db):
    cat = BranchCatalog(small_db, MAIN_BRANCH)
    fixtures = gen_why_not_fixtures(cat, seed=0, n=100)
    assert len(fixtures) == 100
    first = fixtures[0]
    assert first["table"] == "sales"
    assert first["column"] == "state"
    assert first["culprit"] == "sales.state='CA'"
    assert first["expected_value"] == "California"
    assert "'CA'" in first["sql"]
    for fx in fixtures:
        assert set(fx) == {"sql", "culprit", "expected_value", "table", "column"}
        # the wrong literal is never the true value itself
        assert f"='{fx['expected_value']}'" not in fx["culprit"]


def test_why_not_fixtures_deterministic(small_db):
    cat = BranchCatalog(small_db, MAIN_BRANCH)
    assert gen_why_not_fixtures(cat, seed=3, n=25) == gen_why_not_fixtures(cat, seed=3, n=25)
