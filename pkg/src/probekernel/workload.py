"""Synthetic datasets and probe workloads for exercising the engine.

gen_dataset writes six CSV tables (sales, stores, products, customers,
orders, interactions) with seeded distributions: spelled-out state
names, a shared customer_id key, and uniformly distributed sale
amounts.  gen_tasks builds aggregate query tasks, each with 50 variants
produced by mutation (alias renames, predicate and join reordering,
keyword case, select-list reordering, literal changes) and self-checks
that at least 80% of variants keep the template's core sub-plan.

Drivers: parallel_50 submits all variants as one probe; the scripted
agent walks catalog -> column stats -> partial -> full, recovering from
a wrong-format literal via why_not feedback; with hints enabled it
skips any step whose answer is already a fresh memory fact.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field

from .memory import MemoryFact
from .relational.database import MAIN_BRANCH, Database
from .similarity import similarity

STATE_NAMES = (
    "Alabama", "Arizona", "California", "Colorado", "Florida",
    "Georgia", "Idaho", "Illinois", "Kansas", "Maine",
    "Michigan", "Montana", "Nevada", "Ohio", "Oregon",
    "Texas", "Utah", "Virginia", "Washington", "Wyoming",
)
CATEGORIES = (
    "electronics", "apparel", "grocery", "outdoors",
    "toys", "automotive", "books", "beauty",
)
SEGMENTS = ("consumer", "smb", "enterprise", "public")
CHANNELS = ("email", "phone", "chat", "visit")
STATUSES = ("placed", "shipped", "delivered", "returned")

SCALES = {"small": 10_000, "medium": 100_000}

_PRIMARY_KEYS = {
    "stores": "store_id",
    "products": "product_id",
    "customers": "customer_id",
    "sales": "sale_id",
    "orders": "order_id",
    "interactions": "interaction_id",
}


def _write_csv(path: str, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def gen_dataset(out_dir: str, seed: int = 0, scale: str = "small") -> dict:
    """Write the six CSVs plus manifest.json; returns the manifest."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    n_sales = SCALES[scale]
    n_stores = 40
    n_products = 200 if scale == "small" else 500
    n_customers = 1_000 if scale == "small" else 5_000
    n_orders = 3_000 if scale == "small" else 20_000
    n_interactions = 2_000 if scale == "small" else 10_000

    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(seed)

    # every state gets at least one store so value lookups always land
    store_states = list(STATE_NAMES) + [
        rng.choice(STATE_NAMES) for _ in range(n_stores - len(STATE_NAMES))
    ]
    _write_csv(
        os.path.join(out_dir, "stores.csv"),
        ["store_id", "name", "state", "opened_year"],
        [
            (i + 1, f"store_{i + 1:03d}", store_states[i], rng.randint(1995, 2020))
            for i in range(n_stores)
        ],
    )
    _write_csv(
        os.path.join(out_dir, "products.csv"),
        ["product_id", "name", "category", "price"],
        [
            (
                i + 1,
                f"product_{i + 1:04d}",
                rng.choice(CATEGORIES),
                round(rng.uniform(2.0, 500.0), 2),
            )
            for i in range(n_products)
        ],
    )
    _write_csv(
        os.path.join(out_dir, "customers.csv"),
        ["customer_id", "name", "state", "segment"],
        [
            (
                i + 1,
                f"customer_{i + 1:05d}",
                rng.choice(STATE_NAMES),
                rng.choice(SEGMENTS),
            )
            for i in range(n_customers)
        ],
    )
    sales_rows = []
    for i in range(n_sales):
        store = rng.randint(1, n_stores)
        sales_rows.append(
            (
                i + 1,
                store,
                rng.randint(1, n_products),
                rng.randint(1, n_customers),
                round(rng.uniform(10.0, 110.0), 2),
                rng.randint(1, 10),
                store_states[store - 1],
                rng.randint(2018, 2025),
            )
        )
    _write_csv(
        os.path.join(out_dir, "sales.csv"),
        [
            "sale_id", "store_id", "product_id", "customer_id",
            "amount", "quantity", "state", "sale_year",
        ],
        sales_rows,
    )
    _write_csv(
        os.path.join(out_dir, "orders.csv"),
        ["order_id", "customer_id", "order_total", "order_year", "status"],
        [
            (
                i + 1,
                rng.randint(1, n_customers),
                round(rng.uniform(5.0, 2000.0), 2),
                rng.randint(2018, 2025),
                rng.choice(STATUSES),
            )
            for i in range(n_orders)
        ],
    )
    _write_csv(
        os.path.join(out_dir, "interactions.csv"),
        ["interaction_id", "customer_id", "channel", "note", "score"],
        [
            (
                i + 1,
                rng.randint(1, n_customers),
                (ch := rng.choice(CHANNELS)),
                f"{ch} followup {i + 1}",
                round(rng.uniform(0.0, 1.0), 3),
            )
            for i in range(n_interactions)
        ],
    )
    manifest = {
        "seed": seed,
        "scale": scale,
        "tables": {
            "stores": {"rows": n_stores, "primary_key": "store_id"},
            "products": {"rows": n_products, "primary_key": "product_id"},
            "customers": {"rows": n_customers, "primary_key": "customer_id"},
            "sales": {"rows": n_sales, "primary_key": "sale_id"},
            "orders": {"rows": n_orders, "primary_key": "order_id"},
            "interactions": {"rows": n_interactions, "primary_key": "interaction_id"},
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(data_dir: str) -> Database:
    """Build a Database from a generated data directory."""
    with open(os.path.join(data_dir, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    db = Database()
    for table in sorted(manifest["tables"]):
        db.load_csv(
            os.path.join(data_dir, f"{table}.csv"),
            table,
            primary_key=manifest["tables"][table]["primary_key"],
        )
    return db


# ----------------------------------------------------------------- tasks


@dataclass
class TaskSpec:
    task_id: str
    tables: list
    template: str
    aggregates: list
    group: list
    variants: list
    base_table: str
    pk_col: str
    measure_col: str  # qualified numeric column
    trap_column: str  # qualified text column with a format trap
    trap_bad: str
    trap_good: str
    stats_sqls: list = field(default_factory=list)
    bad_probe_sql: str = ""
    discover_sql: str = ""
    partial_sql_template: str = ""  # has one {literal} slot

    def to_doc(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_doc(cls, doc: dict) -> "TaskSpec":
        return cls(**doc)

    def manifest_entry(self) -> dict:
        return {
            "tables": list(self.tables),
            "aggregates": list(self.aggregates),
            "group": list(self.group),
        }


class _Family:
    """One task template family; literals vary per task instance."""

    def __init__(
        self, name, base, join, group_col, agg_func, agg_col, filter_col,
        literal_pool, trap_column, trap_values,
    ):
        self.name = name
        self.base = base
        self.join = join  # None or (right_table, left_key, right_key)
        self.group_col = group_col
        self.agg_func = agg_func
        self.agg_col = agg_col  # None for COUNT(*)
        self.filter_col = filter_col  # (qualified col, op) numeric filter
        self.literal_pool = literal_pool
        self.trap_column = trap_column
        self.trap_values = trap_values  # value domain for the trap column


_FAMILIES = (
    _Family(
        "sales_by_state", "sales", None, "sales.state", "SUM", "sales.amount",
        ("sales.sale_year", ">="), [2019, 2020, 2021, 2022, 2023],
        "sales.state", STATE_NAMES,
    ),
    _Family(
        "sales_by_store_state", "sales", ("stores", "sales.store_id", "stores.store_id"),
        "stores.state", "COUNT", None,
        ("sales.amount", ">"), [20.0, 30.0, 40.0, 50.0, 60.0],
        "stores.state", STATE_NAMES,
    ),
    _Family(
        "sales_by_category", "sales", ("products", "sales.product_id", "products.product_id"),
        "products.category", "SUM", "sales.amount",
        ("sales.quantity", ">="), [2, 3, 4, 5],
        "products.category", CATEGORIES,
    ),
    _Family(
        "orders_by_segment", "orders", ("customers", "orders.customer_id", "customers.customer_id"),
        "customers.segment", "SUM", "orders.order_total",
        ("orders.order_year", ">="), [2019, 2020, 2021, 2022],
        "customers.segment", SEGMENTS,
    ),
    _Family(
        "orders_by_status", "orders", None, "orders.status", "COUNT", None,
        ("orders.order_total", ">"), [100.0, 250.0, 500.0, 750.0],
        "orders.status", STATUSES,
    ),
    _Family(
        "interactions_by_channel", "interactions", None,
        "interactions.channel", "AVG", "interactions.score",
        ("interactions.score", ">="), [0.1, 0.2, 0.3, 0.4],
        "interactions.channel", CHANNELS,
    ),
)

_MEASURE_COLS = {
    "sales": "sales.amount",
    "orders": "orders.order_total",
    "interactions": "interactions.score",
}

_TRAP_BAD = {
    "sales.state": "CA",
    "stores.state": "CA",
    "products.category": "elec",
    "customers.segment": "ent",
    "orders.status": "del",
    "interactions.channel": "em",
}
_TRAP_GOOD = {
    "sales.state": "California",
    "stores.state": "California",
    "products.category": "electronics",
    "customers.segment": "enterprise",
    "orders.status": "delivered",
    "interactions.channel": "email",
}


def _agg_sql(func, col, alias_of):
    if col is None:
        return "COUNT(*)"
    return f"{func}({alias_of(col)})"


def _benign_conjunct(family, alias_of):
    # always-true floor on the key column; gives every plan two
    # conjuncts over two distinct columns
    pk = f"{family.base}.{_PRIMARY_KEYS[family.base]}"
    return f"{alias_of(pk)} >= 0"


def _build_sql(family, literal, alias_map=None, conjuncts_swapped=False,
               select_reversed=False, join_swapped=False, lower_kw=False,
               extra_projection=False):
    aliases = alias_map or {}

    def alias_of(qualified):
        table, col = qualified.split(".")
        return f"{aliases.get(table, table)}.{col}"

    def table_clause(table):
        a = aliases.get(table)
        return f"{table} {a}" if a else table

    col, op = family.filter_col
    main = f"{alias_of(col)} {op} {literal}"
    benign = _benign_conjunct(family, alias_of)
    where = f"{benign} AND {main}" if conjuncts_swapped else f"{main} AND {benign}"

    select_items = [alias_of(family.group_col), _agg_sql(family.agg_func, family.agg_col, alias_of)]
    if select_reversed:
        select_items.reverse()
    if extra_projection:
        # redundant repeat of the group column; reshapes only the output
        select_items.append(alias_of(family.group_col))

    if family.join is None:
        from_clause = table_clause(family.base)
    else:
        right, lkey, rkey = family.join
        if join_swapped:
            from_clause = (
                f"{table_clause(right)} JOIN {table_clause(family.base)} "
                f"ON {alias_of(rkey)} = {alias_of(lkey)}"
            )
        else:
            from_clause = (
                f"{table_clause(family.base)} JOIN {table_clause(right)} "
                f"ON {alias_of(lkey)} = {alias_of(rkey)}"
            )
    sql = (
        f"SELECT {', '.join(select_items)} FROM {from_clause} "
        f"WHERE {where} GROUP BY {alias_of(family.group_col)}"
    )
    return sql.lower() if lower_kw else sql


# prefixes that would lex as keywords or shadow real tables
_BAD_ALIASES = {"or", "in", "on", "by"} | set(_PRIMARY_KEYS)


def _alias_choices(family, rng):
    tables = [family.base] + ([family.join[0]] if family.join else [])
    style = rng.randint(0, 2)
    if style == 0:
        return {}
    out, used = {}, set()
    for t in tables:
        a = t[:style]
        while a in used or a in _BAD_ALIASES:
            a += "x"
        used.add(a)
        out[t] = a
    return out


def _fmt_literal(value):
    return str(value)


def gen_tasks(catalog, n_tasks: int, n_variants: int, seed: int) -> list:
    """Build task specs with mutation variants; self-check core sharing."""
    from .planner import canonicalize, parse_sql

    def core_fp(plan):
        node = plan
        while node.kind == "PR":
            node = node.children[0]
        return node.fingerprint_value

    tasks = []
    for t in range(n_tasks):
        family = _FAMILIES[t % len(_FAMILIES)]
        rng = random.Random(f"{seed}:{family.name}:{t}")
        literal = rng.choice(family.literal_pool)
        template = _build_sql(family, _fmt_literal(literal))

        n_literal = n_variants // 5   # 20% change the filter literal
        n_reorder = n_variants // 5   # 20% reorder the select list
        n_extra = n_variants // 10    # 10% add a redundant projection
        variants = []
        for i in range(n_variants):
            vrng = random.Random(f"{seed}:{family.name}:{t}:{i}")
            lit = _fmt_literal(literal)
            select_reversed = extra_projection = False
            if i < n_literal:
                pool = [v for v in family.literal_pool if v != literal]
                lit = _fmt_literal(pool[i % len(pool)])
            elif i < n_literal + n_reorder:
                select_reversed = True
            elif i < n_literal + n_reorder + n_extra:
                extra_projection = True
            variants.append(
                _build_sql(
                    family,
                    lit,
                    alias_map=_alias_choices(family, vrng),
                    conjuncts_swapped=vrng.random() < 0.5,
                    select_reversed=select_reversed,
                    join_swapped=family.join is not None and vrng.random() < 0.5,
                    lower_kw=vrng.random() < 0.3,
                    extra_projection=extra_projection,
                )
            )

        template_core = core_fp(canonicalize(parse_sql(template, catalog)))
        shared = 0
        for sql in variants:
            plan = canonicalize(parse_sql(sql, catalog))
            if core_fp(plan) == template_core:
                shared += 1
        if shared < 0.8 * len(variants):
            raise ValueError(
                f"task {t}: only {shared}/{len(variants)} variants share the core"
            )

        trap_col = family.trap_column
        base = family.base
        pk = f"{base}.{_PRIMARY_KEYS[base]}"
        measure = _MEASURE_COLS[base]
        group_canonical = family.group_col
        agg_canonical = (
            "count(*)"
            if family.agg_col is None
            else f"{family.agg_func.lower()}({family.agg_col})"
        )
        trap_table = trap_col.split(".")[0]
        trap_pk = f"{trap_table}.{_PRIMARY_KEYS[trap_table]}"
        stats_sqls = [
            f"SELECT COUNT(DISTINCT {trap_col}) FROM {trap_table}",
            f"SELECT MIN({measure}), MAX({measure}) FROM {base}",
        ]
        task = TaskSpec(
            task_id=f"task_{t:03d}_{family.name}",
            tables=[family.base] + ([family.join[0]] if family.join else []),
            template=template,
            aggregates=[agg_canonical],
            group=[group_canonical],
            variants=variants,
            base_table=base,
            pk_col=pk,
            measure_col=measure,
            trap_column=trap_col,
            trap_bad=_TRAP_BAD[trap_col],
            trap_good=_TRAP_GOOD[trap_col],
            stats_sqls=stats_sqls,
            bad_probe_sql=(
                f"SELECT {trap_pk}, {trap_col} FROM {trap_table} "
                f"WHERE {trap_col} = '{_TRAP_BAD[trap_col]}'"
            ),
            discover_sql=f"SELECT DISTINCT {trap_col} FROM {trap_table}",
            partial_sql_template=(
                f"SELECT COUNT(*) FROM {trap_table} WHERE {trap_col} = '{{literal}}'"
            ),
        )
        # trap table must be part of the probe-able task tables
        if trap_table not in task.tables:
            task.tables.append(trap_table)
        tasks.append(task)
    return tasks


def gen_workload(out_dir: str, n_tasks: int, n_variants: int, seed: int, scale: str = "small") -> dict:
    """Dataset + tasks.json in one directory; returns summary paths."""
    manifest = gen_dataset(out_dir, seed=seed, scale=scale)
    db = load_dataset(out_dir)
    from .relational.database import MAIN_BRANCH, BranchCatalog

    catalog = BranchCatalog(db, MAIN_BRANCH)
    tasks = gen_tasks(catalog, n_tasks, n_variants, seed)
    tasks_path = os.path.join(out_dir, "tasks.json")
    with open(tasks_path, "w", encoding="utf-8") as fh:
        json.dump([t.to_doc() for t in tasks], fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "out_dir": out_dir,
        "tasks": len(tasks),
        "variants": n_variants,
        "tasks_path": tasks_path,
        "manifest": manifest,
    }


def load_tasks(data_dir: str) -> list:
    with open(os.path.join(data_dir, "tasks.json"), "r", encoding="utf-8") as fh:
        return [TaskSpec.from_doc(doc) for doc in json.load(fh)]


# ---------------------------------------------------------------- drivers


def _sql_probe(probe_id, agent_id, turn, phase, goal, queries, principal="analyst"):
    return {
        "probe_id": probe_id,
        "agent_id": agent_id,
        "principal": principal,
        "turn": turn,
        "kind": "sql_batch",
        "queries": queries,
        "brief": {"phase": phase, "goal": goal},
    }


def parallel_probe(task: TaskSpec, agent_id: str, turn: int, principal="analyst") -> dict:
    queries = [
        {"qid": f"v{i:02d}", "sql": sql, "accuracy": "exact"}
        for i, sql in enumerate(task.variants)
    ]
    return _sql_probe(
        f"{task.task_id}-parallel", agent_id, turn,
        "full_solution", f"{task.task_id} all attempts", queries, principal,
    )


def run_parallel(engine, task: TaskSpec, agent_id: str, turn: int, principal="analyst") -> dict:
    doc = parallel_probe(task, agent_id, turn, principal)
    return engine.handle_wire(json.dumps(doc))


class ScriptedRun:
    def __init__(self):
        self.probes = 0
        self.responses = []
        self.skipped = []


def _first_why_not_value(response):
    for fb in response.get("feedback", ()):
        if fb.get("kind") == "why_not":
            vals = fb.get("payload", {}).get("suggested_values") or []
            if vals:
                return str(vals[0])
    return None


def _closest_value(rows, needle):
    best, best_score = None, -1.0
    for row in rows:
        for v in row:
            if not isinstance(v, str):
                continue
            s = similarity(needle, v)
            if s > best_score:
                best, best_score = v, s
    return best


def run_scripted(
    engine,
    task: TaskSpec,
    agent_id: str,
    principal: str = "analyst",
    start_turn: int = 0,
    with_hints: bool = False,
) -> ScriptedRun:
    """Drive one task through the staged exploration script.

    Steps whose answers already sit in memory as fresh facts are
    skipped, so agents sharing an engine get cheaper over time.
    ``with_hints`` marks runs where seed_hint_facts pre-loaded those
    facts; it only labels the run, the skip logic is the same.
    """
    run = ScriptedRun()
    turn = start_turn

    def fresh(key):
        if not engine.enable_memory:
            return False
        fact = engine.memory.by_key(key, principal)
        return fact is not None and not fact.stale

    def send(doc):
        nonlocal turn
        run.probes += 1
        resp = engine.handle_wire(json.dumps(doc))
        run.responses.append(resp)
        turn += 1
        return resp

    def skip(step):
        run.skipped.append(step)

    def pid(step):
        return f"{task.task_id}-{agent_id}-{step}"

    have_schema = fresh("schema_summary")
    have_stats = fresh(f"colstats:{task.base_table}")
    have_format = fresh(f"valuefmt:{task.trap_column}")

    # stage 1: metadata
    if have_schema:
        skip("catalog_tables")
        skip("catalog_columns")
    else:
        send(_sql_probe(
            pid("s1"), agent_id, turn, "metadata_exploration", "list tables",
            [{"qid": "q", "sql": "SELECT name, n_rows FROM catalog_tables ORDER BY name", "accuracy": "exact"}],
            principal,
        ))
        send(_sql_probe(
            pid("s2"), agent_id, turn, "metadata_exploration", f"columns of {task.base_table}",
            [{"qid": "q", "sql": (
                "SELECT table_name, column_name, type FROM catalog_columns "
                f"WHERE table_name = '{task.base_table}'"
            ), "accuracy": "exact"}],
            principal,
        ))

    # stage 2: locate the value the task cares about
    send({
        "probe_id": pid("s3"), "agent_id": agent_id, "principal": principal,
        "turn": turn, "kind": "locate", "queries": [],
        "brief": {"phase": "metadata_exploration", "goal": task.trap_good},
    })

    # stage 3: column statistics
    if have_stats:
        skip("stats_distinct")
        skip("stats_minmax")
    else:
        for i, sql in enumerate(task.stats_sqls):
            send(_sql_probe(
                pid(f"s4_{i}"), agent_id, turn, "column_statistics",
                f"statistics of {task.base_table}",
                [{"qid": "q", "sql": sql, "accuracy": "exact"}],
                principal,
            ))

    # stage 4: partial attempt with the format trap
    literal = task.trap_good if have_format else None
    if literal is None:
        resp = send(_sql_probe(
            pid("s6"), agent_id, turn, "partial_solution",
            f"filter {task.trap_column}",
            [{"qid": "q", "sql": task.bad_probe_sql, "accuracy": "exact"}],
            principal,
        ))
        literal = _first_why_not_value(resp)
        if literal is None:
            # no steering: discover the value domain the hard way
            resp = send(_sql_probe(
                pid("s6b"), agent_id, turn, "column_statistics",
                f"values of {task.trap_column}",
                [{"qid": "q", "sql": task.discover_sql, "accuracy": "exact"}],
                principal,
            ))
            rows = resp["outcomes"][0].get("result", {}).get("rows", [])
            literal = _closest_value(rows, task.trap_bad) or task.trap_good
        if engine.enable_memory:
            # record what the trap taught us so later tasks skip it
            table, column = task.trap_column.split(".")
            engine.memory.put_fact(MemoryFact(
                fact_key=f"valuefmt:{task.trap_column}",
                kind="value_format",
                scope=((table, column),),
                content={"column": task.trap_column, "example": literal},
                note=f"{task.trap_column} holds full names like {literal}",
                data_versions={table: engine.db.table_version(MAIN_BRANCH, table)},
                created_by=agent_id,
                principal=principal,
                created_turn=turn,
            ))
    else:
        skip("bad_literal_probe")

    send(_sql_probe(
        pid("s7"), agent_id, turn, "partial_solution",
        f"aggregate where {task.trap_column} = {literal}",
        [{"qid": "q", "sql": task.partial_sql_template.format(literal=literal)}],
        principal,
    ))

    # stage 5: the full task query
    send(_sql_probe(
        pid("s8"), agent_id, turn, "full_solution", f"{task.task_id} final",
        [{"qid": "q", "sql": task.template, "accuracy": "exact"}],
        principal,
    ))
    return run


def seed_hint_facts(engine, tasks, principal: str = "analyst", created_by: str = "expert"):
    """Pre-load the memory facts the with-hints agent may consume."""
    from .relational.database import MAIN_BRANCH, BranchCatalog

    catalog = BranchCatalog(engine.db, MAIN_BRANCH)
    tables = {t: catalog.row_count(t) for t in catalog.tables()}
    engine.memory.put_fact(MemoryFact(
        fact_key="schema_summary",
        kind="schema_summary",
        scope=(("__catalog__",),),
        content={"tables": tables},
        note="tables and row counts " + " ".join(sorted(tables)),
        data_versions={"__catalog__": engine.db.catalog_version(MAIN_BRANCH)},
        created_by=created_by,
        principal=principal,
        created_turn=0,
    ))
    seen = set()
    for task in tasks:
        if task.base_table not in seen:
            seen.add(task.base_table)
            engine.memory.put_fact(MemoryFact(
                fact_key=f"colstats:{task.base_table}",
                kind="column_stats",
                scope=((task.base_table,),),
                content={"table": task.base_table, "results": {}},
                note=f"column statistics for {task.base_table}",
                data_versions={task.base_table: catalog.table_version(task.base_table)},
                created_by=created_by,
                principal=principal,
                created_turn=0,
            ))
        if task.trap_column not in seen:
            seen.add(task.trap_column)
            table = task.trap_column.split(".")[0]
            engine.memory.put_fact(MemoryFact(
                fact_key=f"valuefmt:{task.trap_column}",
                kind="value_format",
                scope=((table, task.trap_column.split(".")[1]),),
                content={"column": task.trap_column, "example": task.trap_good},
                note=f"{task.trap_column} holds full names like {task.trap_good}",
                data_versions={table: catalog.table_version(table)},
                created_by=created_by,
                principal=principal,
                created_turn=0,
            ))


def replay_trace(records: list, engine) -> list:
    """Re-drive recorded probes through a fresh engine; list mismatches.

    Compares each record's outcome summary and operator counts against
    the fresh engine's trace.  Empty result means faithful replay.
    """
    mismatches = []
    replayable = [r for r in records if "probe" in r]
    for rec in replayable:
        engine.handle_wire(json.dumps(rec["probe"]))
    fresh = engine.trace
    if len(fresh) != len(replayable):
        mismatches.append(
            f"record count differs: {len(fresh)} replayed vs {len(replayable)} recorded"
        )
        return mismatches
    for old, new in zip(replayable, fresh):
        for key in ("outcomes", "executed_operator_count",
                    "cache_hit_operator_count", "activity", "branch"):
            if old.get(key) != new.get(key):
                mismatches.append(
                    f"probe {old['probe_id']}: {key} differs: "
                    f"{old.get(key)!r} vs {new.get(key)!r}"
                )
    return mismatches


# --------------------------------------------------------- why_not fixtures


def gen_why_not_fixtures(catalog, seed: int, n: int = 100) -> list:
    """Queries guaranteed empty by a wrong-format literal.

    Each fixture: sql, the culprit conjunct's canonical text, and the
    true value that should appear among the suggestions.  The first
    fixture is always the CA/California case.
    """
    pool = [
        ("sales", "state"),
        ("customers", "state"),
        ("customers", "segment"),
        ("products", "category"),
        ("orders", "status"),
        ("interactions", "channel"),
    ]
    rng = random.Random(seed)
    fixtures = []
    for i in range(n):
        if i == 0:
            table, column, value, bad = "sales", "state", "California", "CA"
        else:
            table, column = pool[rng.randrange(len(pool))]
            stats = catalog.column_stats(table)[column]
            values = [v for v in stats.distinct_sample if isinstance(v, str)]
            value = values[rng.randrange(len(values))]
            style = rng.randint(0, 2)
            if style == 0:
                bad = value[:2].upper()
            elif style == 1:
                bad = value[:3].lower()
            else:
                bad = value[:4].lower()
            existing = set(values)
            while bad in existing or bad == value:
                bad += "x"
        pk = _PRIMARY_KEYS[table]
        two_conjuncts = rng.random() < 0.5
        where = f"{table}.{column} = '{bad}'"
        if two_conjuncts:
            where += f" AND {table}.{pk} >= 0"
        sql = f"SELECT {table}.{pk}, {table}.{column} FROM {table} WHERE {where}"
        fixtures.append({
            "sql": sql,
            "culprit": f"{table}.{column}='{bad}'",
            "expected_value": value,
            "table": table,
            "column": column,
        })
    return fixtures
