"""Parsing, canonicalization, fingerprints, cost, and locate."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probekernel.errors import SqlError
from probekernel.planner.cost import estimate_cost
from probekernel.planner.locate import locate
from probekernel.planner.nodes import canonicalize, enumerate_subplans
from probekernel.planner.parser import parse_sql
from probekernel.relational.database import MAIN_BRANCH, BranchCatalog, Database

import oracles


@pytest.fixture()
def cat(small_db):
    return BranchCatalog(small_db, MAIN_BRANCH)


def canon(sql, cat):
    return canonicalize(parse_sql(sql, cat))


# ------------------------------------------------------------- goldens


def test_canonical_text_goldens(cat):
    assert (
        canon("SELECT stores.state FROM stores", cat).canonical_text
        == "PR(stores.state;TS(stores))"
    )
    assert canon(
        "SELECT sales.state, SUM(sales.amount) FROM sales "
        "WHERE sales.state = 'California' GROUP BY sales.state",
        cat,
    ).canonical_text == (
        "UA(sales.state|sum(sales.amount);FI(sales.state='California';TS(sales)))"
    )
    assert canon(
        "SELECT s.state, COUNT(*) FROM sales s JOIN stores st "
        "ON s.store_id = st.store_id WHERE st.state = 'California' "
        "AND s.amount >= 50 GROUP BY s.state ORDER BY s.state LIMIT 5",
        cat,
    ).canonical_text == (
        "OT(limit:5;OT(sort:sales.state asc;UA(sales.state|count(*);"
        "FI(and(sales.amount>=50.0,stores.state='California');"
        "HJ(sales.store_id=stores.store_id;TS(sales),TS(stores))))))"
    )


def test_fingerprint_is_fnv_of_canonical_text(cat, tasks20):
    plans = [canon(t.template, cat) for t in tasks20[:6]]
    plans.append(canon("SELECT stores.state FROM stores", cat))
    for p in plans:
        for node, _ in enumerate_subplans(p):
            assert node.fingerprint_value == oracles.fnv1a_64(node.canonical_text)


def test_fingerprints_collision_free_on_workload_corpus(cat, tasks20):
    seen = {}
    for task in tasks20:
        for sql in [task.template] + list(task.variants):
            plan = canon(sql, cat)
            for node, _ in enumerate_subplans(plan):
                fp = node.fingerprint_value
                if fp in seen:
                    assert seen[fp] == node.canonical_text
                else:
                    seen[fp] = node.canonical_text


# ------------------------------------------------- equivalence classes


def eq_fp(cat, a, b):
    return canon(a, cat).fingerprint_value == canon(b, cat).fingerprint_value


def test_and_conjunct_order_is_canonical(cat):
    assert eq_fp(
        cat,
        "SELECT sales.sale_id FROM sales WHERE sales.amount > 50 AND sales.state = 'Maine'",
        "SELECT sales.sale_id FROM sales WHERE sales.state = 'Maine' AND sales.amount > 50",
    )


def test_in_list_order_is_canonical(cat):
    assert eq_fp(
        cat,
        "SELECT sales.sale_id FROM sales WHERE sales.state IN ('Maine', 'Idaho')",
        "SELECT sales.sale_id FROM sales WHERE sales.state IN ('Idaho', 'Maine')",
    )


def test_join_side_swap_is_canonical(cat):
    assert eq_fp(
        cat,
        "SELECT stores.state, COUNT(*) FROM sales JOIN stores "
        "ON sales.store_id = stores.store_id GROUP BY stores.state",
        "SELECT stores.state, COUNT(*) FROM stores JOIN sales "
        "ON stores.store_id = sales.store_id GROUP BY stores.state",
    )


def test_alias_erasure(cat):
    assert eq_fp(
        cat,
        "SELECT s.sale_id FROM sales s WHERE s.amount > 50",
        "SELECT zz.sale_id FROM sales zz WHERE zz.amount > 50",
    )


def test_keyword_case_is_erased(cat):
    assert eq_fp(
        cat,
        "select sales.sale_id from sales where sales.amount > 50",
        "SELECT sales.sale_id FROM sales WHERE sales.amount > 50",
    )


def test_projection_order_is_semantic_but_children_shared(cat):
    a = canon("SELECT sales.state, sales.amount FROM sales", cat)
    b = canon("SELECT sales.amount, sales.state FROM sales", cat)
    assert a.fingerprint_value != b.fingerprint_value
    assert a.children[0].fingerprint_value == b.children[0].fingerprint_value


def test_canonicalize_idempotent_on_corpus(cat, tasks20):
    for task in tasks20[:5]:
        for sql in [task.template] + list(task.variants)[:10]:
            p = canonicalize(parse_sql(sql, cat))
            assert canonicalize(p).canonical_text == p.canonical_text


_COLS = ("tt.state", "tt.amount", "tt.id")
_LITS = {"tt.state": "'Maine'", "tt.amount": "42.5", "tt.id": "7"}
_PROP_CAT = None


def _prop_cat():
    global _PROP_CAT
    if _PROP_CAT is None:
        db = Database()
        db.create_table(
            "tt",
            [("id", "int64"), ("state", "text"), ("amount", "float64")],
            primary_key="id",
        )
        db.insert_rows("tt", [(1, "Maine", 10.0)])
        _PROP_CAT = BranchCatalog(db, MAIN_BRANCH)
    return _PROP_CAT


@settings(max_examples=80, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(_COLS), st.sampled_from(("=", ">", "<=", "<>"))),
        min_size=1,
        max_size=4,
    ),
    st.randoms(use_true_random=False),
)
def test_random_conjunct_permutations_share_fingerprints(conjs, rnd):
    cat = _prop_cat()
    parts = [f"{c} {op} {_LITS[c]}" for c, op in conjs]
    base = "SELECT tt.id FROM tt WHERE " + " AND ".join(parts)
    shuffled = parts[:]
    rnd.shuffle(shuffled)
    other = "SELECT tt.id FROM tt WHERE " + " AND ".join(shuffled)
    pa = canon(base, cat)
    pb = canon(other, cat)
    assert pa.canonical_text == pb.canonical_text
    assert canonicalize(pa).canonical_text == pa.canonical_text


# ------------------------------------------------------------- literals


def test_literal_normalization(cat):
    a = canon("SELECT sales.sale_id FROM sales WHERE sales.store_id = 007", cat)
    b = canon("SELECT sales.sale_id FROM sales WHERE sales.store_id = 7", cat)
    assert a.canonical_text == b.canonical_text
    f = canon("SELECT sales.sale_id FROM sales WHERE sales.amount = 1e2", cat)
    assert "100.0" in f.canonical_text


def test_string_literal_quote_escaping(cat):
    p = canon("SELECT customers.customer_id FROM customers WHERE customers.name = 'O''Brien'", cat)
    assert "'O''Brien'" in p.canonical_text


def test_int_literal_widens_for_float_column(cat):
    assert eq_fp(
        cat,
        "SELECT sales.sale_id FROM sales WHERE sales.amount >= 50",
        "SELECT sales.sale_id FROM sales WHERE sales.amount >= 50.0",
    )


# ---------------------------------------------------------- parse errors


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT nope.x FROM nope",
        "SELECT sales.nope FROM sales",
        "SELECT state FROM sales JOIN stores ON sales.store_id = stores.store_id",
        "SELECT sales.sale_id FROM",
        "SELECT sales.sale_id FROM sales WHERE",
        "SELECT sales.sale_id FROM sales WHERE sales.state = 5",
        "SELECT sales.sale_id FROM sales WHERE sales.state LIKE 5",
        "FROM sales SELECT sales.sale_id",
        "SELECT SUM(sales.state) FROM sales",
        "SELECT sales.sale_id FROM sales GROUP BY sales.state",
    ],
)
def test_parse_errors(cat, sql):
    with pytest.raises(SqlError):
        parse_sql(sql, cat)


def test_unqualified_column_ok_when_unambiguous(cat):
    p = canon("SELECT state FROM stores", cat)
    assert "stores.state" in p.canonical_text


# ------------------------------------------------------------ cost model


def cost_cat():
    db = Database()
    db.create_table("big", [("id", "int64"), ("grp", "int64"), ("name", "text")], primary_key="id")
    db.insert_rows("big", [(i, i % 100, f"n{i}") for i in range(1000)])
    db.create_table("dim", [("grp", "int64"), ("label", "text")], primary_key="grp")
    db.insert_rows("dim", [(i, f"l{i}") for i in range(100)])
    return BranchCatalog(db, MAIN_BRANCH)


def node_rows(plan, cat, kind):
    est = estimate_cost(plan, cat)
    return [est.rows(n) for n, _ in enumerate_subplans(plan) if n.kind == kind]


def test_scan_estimate_is_exact_row_count():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big", cat)
    assert node_rows(p, cat, "TS") == [1000.0]


def test_equality_selectivity_point_one():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big WHERE big.grp = 5", cat)
    assert node_rows(p, cat, "FI") == [100.0]


def test_range_selectivity_point_three():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big WHERE big.id > 17", cat)
    assert node_rows(p, cat, "FI") == [300.0]


def test_like_selectivity_quarter():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big WHERE big.name LIKE 'n%'", cat)
    assert node_rows(p, cat, "FI") == [250.0]


def test_conjunction_multiplies_disjunction_caps():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big WHERE big.grp = 5 AND big.id > 17", cat)
    assert node_rows(p, cat, "FI") == [1000.0 * 0.1 * 0.3]
    p = canon(
        "SELECT big.id FROM big WHERE big.id > 1 OR big.id < 5 OR big.id > 7 OR big.id < 9",
        cat,
    )
    # 4 * 0.3 = 1.2, capped at selectivity 1.0
    assert node_rows(p, cat, "FI") == [1000.0]


def test_join_estimate_formula():
    cat = cost_cat()
    # |big| * |dim| / max(distinct grp sides) = 1000*100/100
    p = canon(
        "SELECT big.id FROM big JOIN dim ON big.grp = dim.grp",
        cat,
    )
    assert node_rows(p, cat, "HJ") == [1000.0]


def test_total_cost_sums_input_cardinalities():
    cat = cost_cat()
    p = canon("SELECT big.id FROM big WHERE big.grp = 5", cat)
    # TS reads 1000, FI reads 1000, PR reads 100
    assert estimate_cost(p, cat).total_cost == 2100.0


def test_adding_conjunct_never_raises_estimate():
    cat = cost_cat()
    base = "SELECT big.id FROM big WHERE big.grp = 5"
    p0 = canon(base, cat)
    r0 = node_rows(p0, cat, "FI")[0]
    for extra in ("big.id > 3", "big.name LIKE 'n%'", "big.grp = 7"):
        p1 = canon(base + " AND " + extra, cat)
        assert node_rows(p1, cat, "FI")[0] <= r0


# --------------------------------------------------------------- locate


def locate_cat():
    db = Database()
    db.create_table("electronic_goods", [("id", "int64"), ("maker", "text")], primary_key="id")
    db.create_table("employees", [("id", "int64"), ("region", "text")], primary_key="id")
    db.insert_rows("electronic_goods", [(1, "acme")])
    db.insert_rows("employees", [(1, "California"), (2, "Maine")])
    return BranchCatalog(db, MAIN_BRANCH)


def test_locate_ranks_similar_table_first():
    cat = locate_cat()
    matches = locate("electronics", cat, ("table_names",))
    assert matches[0].table == "electronic_goods"
    assert matches[0].score == pytest.approx(11 / 20)
    assert all(m.table != "employees" or m.score < 11 / 20 for m in matches)


def test_locate_scores_match_oracle_jaccard():
    cat = locate_cat()
    for m in locate("electronics", cat, ("table_names", "column_names")):
        target = m.table if m.kind == "table" else m.column
        assert m.score == pytest.approx(oracles.trigram_jaccard("electronics", target))


def test_locate_finds_cell_values():
    cat = locate_cat()
    matches = locate("california", cat, ("cells",))
    assert matches
    top = matches[0]
    assert (top.table, top.column, top.value) == ("employees", "region", "California")
    assert top.score == 1.0


def test_locate_drops_zero_scores():
    cat = locate_cat()
    for m in locate("zzqqy", cat, ("table_names", "column_names", "cells")):
        assert m.score > 0.0


def test_locate_tie_break_lexicographic():
    db = Database()
    db.create_table("aaa", [("val", "text")])
    db.create_table("aab", [("val", "text")])
    cat = BranchCatalog(db, MAIN_BRANCH)
    matches = locate("aa", cat, ("table_names",))
    assert [m.table for m in matches[:2]] == ["aaa", "aab"]
