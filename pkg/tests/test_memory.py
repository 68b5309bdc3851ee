"""Version-stamped fact store: staleness, visibility, retrieval, log."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probekernel.errors import SchemaError
from probekernel.memory import MemoryFact, MemoryQuery, MemoryStore
from probekernel.relational.database import MAIN_BRANCH, Database

import oracles


def memdb():
    db = Database()
    db.create_table("t", [("id", "int64"), ("v", "text")], primary_key="id")
    db.insert_rows("t", [(1, "a"), (2, "b")])
    db.create_table("u", [("id", "int64")], primary_key="id")
    db.insert_rows("u", [(1,)])
    return db


def fact(key="k1", kind="probe_result", table="t", principal="p1", note="note", **over):
    db_version = over.pop("version", None)
    f = MemoryFact(
        fact_key=key,
        kind=kind,
        scope=((table,),),
        content=over.pop("content", {"rowcount": 2, "value_set": ["a", "b"]}),
        note=note,
        data_versions={table: db_version if db_version is not None else 1},
        created_by="agent",
        principal=principal,
        created_turn=over.pop("turn", 1),
    )
    return f


def test_put_and_by_key_round_trip():
    store = MemoryStore(memdb())
    store.put_fact(fact())
    got = store.by_key("k1", "p1")
    assert got is not None and not got.stale
    assert got.content["rowcount"] == 2


def test_unknown_kind_and_unknown_scope_table_rejected():
    store = MemoryStore(memdb())
    with pytest.raises(SchemaError):
        store.put_fact(fact(kind="gossip"))
    with pytest.raises(SchemaError):
        store.put_fact(fact(table="missing"))


def test_write_flips_staleness_and_never_back():
    db = memdb()
    store = MemoryStore(db)
    store.put_fact(fact(version=db.table_version(MAIN_BRANCH, "t")))
    assert not store.by_key("k1", "p1").stale
    db.write(MAIN_BRANCH, "t", [(3, "c")])
    assert store.by_key("k1", "p1").stale
    # staleness is permanent even if nothing changes afterwards
    assert store.by_key("k1", "p1").stale


def test_by_key_returns_stale_flagged_but_by_scope_filters():
    db = memdb()
    store = MemoryStore(db)
    store.put_fact(fact(version=db.table_version(MAIN_BRANCH, "t")))
    db.write(MAIN_BRANCH, "t", [(3, "c")])
    assert store.by_key("k1", "p1").stale is True
    assert store.by_scope((("t",),), "p1") == []


def test_newer_fact_supersedes_older_version():
    store = MemoryStore(memdb())
    store.put_fact(fact(content={"rowcount": 1}))
    store.put_fact(fact(content={"rowcount": 9}))
    assert store.by_key("k1", "p1").content["rowcount"] == 9


def test_principal_privacy_and_shareable_kinds():
    store = MemoryStore(memdb())
    store.put_fact(fact(key="private", kind="probe_result", principal="p1"))
    store.put_fact(fact(key="shared", kind="column_stats", principal="p1",
                        content={"table": "t", "results": {}}))
    assert store.by_key("private", "p2") is None
    assert store.by_key("private", "p1") is not None
    assert store.by_key("shared", "p2") is not None


def test_by_scope_touches_matching_tables():
    db = memdb()
    store = MemoryStore(db)
    store.put_fact(fact(key="kt", table="t", version=db.table_version(MAIN_BRANCH, "t")))
    store.put_fact(fact(key="ku", table="u", version=db.table_version(MAIN_BRANCH, "u")))
    got = store.by_scope((("t",),), "p1")
    assert [f.fact_key for f in got] == ["kt"]


def test_by_similarity_ranks_matching_note_first():
    db = memdb()
    store = MemoryStore(db)
    v = db.table_version(MAIN_BRANCH, "t")
    store.put_fact(fact(key="a", kind="schema_summary", note="employee availability table",
                        version=v, content={}))
    store.put_fact(fact(key="b", kind="schema_summary", note="quarterly revenue rollup",
                        version=v, content={}))
    got = store.by_similarity("where is employee availability stored", 3, "p1")
    assert got and got[0].fact_key == "a"
    # scores follow the oracle trigram definition over note + scope text
    sa = oracles.trigram_jaccard(
        "where is employee availability stored", "employee availability table t"
    )
    sb = oracles.trigram_jaccard(
        "where is employee availability stored", "quarterly revenue rollup t"
    )
    assert sa > sb


def test_by_similarity_tie_breaks_by_recency():
    db = memdb()
    store = MemoryStore(db)
    v = db.table_version(MAIN_BRANCH, "t")
    store.put_fact(fact(key="old", note="alpha beta gamma", version=v))
    store.put_fact(fact(key="new", note="alpha beta gamma", version=v))
    got = store.by_similarity("alpha beta", 2, "p1")
    assert [f.fact_key for f in got] == ["new", "old"]


def test_lookup_dispatch():
    db = memdb()
    store = MemoryStore(db)
    v = db.table_version(MAIN_BRANCH, "t")
    store.put_fact(fact(version=v))
    assert store.lookup(MemoryQuery(mode="by_key", key="k1", principal="p1"))
    assert store.lookup(MemoryQuery(mode="by_scope", scope=(("t",),), principal="p1"))
    assert store.lookup(
        MemoryQuery(mode="by_similarity", phrase="note", top_k=1, principal="p1")
    )


def test_fact_value_set_respects_privacy():
    store = MemoryStore(memdb())
    store.put_fact(fact())
    assert store.fact_value_set("k1", "p1") == {"a", "b"}
    assert store.fact_value_set("k1", "p2") is None
    assert store.fact_value_set("k1", None) == {"a", "b"}


def test_revalidate_refreshes_with_reexecute():
    db = memdb()
    store = MemoryStore(db)
    store.put_fact(fact(version=db.table_version(MAIN_BRANCH, "t")))
    db.write(MAIN_BRANCH, "t", [(3, "c")])
    assert store.by_key("k1", "p1").stale
    got = store.revalidate("k1", refresh=True, reexecute=lambda f: {"rowcount": 3})
    assert not got.stale
    assert got.content == {"rowcount": 3}
    assert not store.by_key("k1", "p1").stale


def test_log_round_trip(tmp_path):
    path = str(tmp_path / "mem.ndjson")
    db = memdb()
    store = MemoryStore(db, log_path=path)
    store.put_fact(fact(version=db.table_version(MAIN_BRANCH, "t")))
    store.put_fact(fact(key="k2", version=db.table_version(MAIN_BRANCH, "t")))

    reloaded = MemoryStore(db, log_path=path)
    assert reloaded.by_key("k1", "p1") is not None
    assert reloaded.by_key("k2", "p1") is not None


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=100_000))
def test_staleness_never_lies(seed):
    """Randomized write/put/lookup schedules: a fact whose stamped
    version is behind the table's current version must read stale."""
    rng = random.Random(seed)
    db = memdb()
    store = MemoryStore(db)
    next_pk = 10
    live_keys = []
    for step in range(rng.randrange(3, 15)):
        roll = rng.random()
        if roll < 0.4:
            table = rng.choice(("t", "u"))
            rows = [(next_pk,)] if table == "u" else [(next_pk, "w")]
            next_pk += 1
            db.write(MAIN_BRANCH, table, rows)
        elif roll < 0.7:
            table = rng.choice(("t", "u"))
            key = f"f{step}"
            store.put_fact(
                fact(key=key, table=table, version=db.table_version(MAIN_BRANCH, table))
            )
            live_keys.append((key, table))
        elif live_keys:
            key, table = rng.choice(live_keys)
            got = store.by_key(key, "p1")
            behind = got.data_versions[table] < db.table_version(MAIN_BRANCH, table)
            assert got.stale == behind
    for key, table in live_keys:
        got = store.by_key(key, "p1")
        behind = got.data_versions[table] < db.table_version(MAIN_BRANCH, table)
        assert got.stale == behind
