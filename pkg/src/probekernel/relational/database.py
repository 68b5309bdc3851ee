"""Branched relational store.

A Database holds a mainline branch plus any number of what-if branches.
Branch state shares row segments copy-on-write (see storage.py), so
forking is O(tables x chunks) reference bumps and rollback is
O(chunks) regardless of how many rows the branch wrote: freed
structures are parked on a graveyard and deallocated later via
``reclaim()``, off the rollback path.

Write bookkeeping: every write batch gets a global sequence number and
every written row key is recorded in the writing branch's log.  Merge
(in branching.py) replays these logs along branch lineage to find
row-level, first-committer-wins conflicts.

Two virtual tables are always readable: ``catalog_tables(name, n_rows,
version)`` and ``catalog_columns(table_name, column_name, type,
n_distinct, n_null, min_text, max_text)``.  Stats are computed lazily
and cached per (branch, table, version).
"""

from __future__ import annotations

import csv
import threading
from typing import Iterable, Optional

from ..errors import BranchError, SchemaError, TypeMismatchError
from .storage import DEFAULT_CHUNK_CAPACITY, SegmentRegistry, TableState
from .types import (
    BOOL,
    FLOAT64,
    INT64,
    TEXT,
    Column,
    Schema,
    Value,
    coerce_value,
    value_to_text,
)

MAIN_BRANCH = 0

CATALOG_TABLES = "catalog_tables"
CATALOG_COLUMNS = "catalog_columns"

_CATALOG_TABLES_SCHEMA = Schema(
    CATALOG_TABLES,
    (Column("name", TEXT), Column("n_rows", INT64), Column("version", INT64)),
    primary_key="name",
)
_CATALOG_COLUMNS_SCHEMA = Schema(
    CATALOG_COLUMNS,
    (
        Column("table_name", TEXT),
        Column("column_name", TEXT),
        Column("type", TEXT),
        Column("n_distinct", INT64),
        Column("n_null", INT64),
        Column("min_text", TEXT),
        Column("max_text", TEXT),
    ),
)

VIRTUAL_TABLES = {
    CATALOG_TABLES: _CATALOG_TABLES_SCHEMA,
    CATALOG_COLUMNS: _CATALOG_COLUMNS_SCHEMA,
}

# pseudo-table name under which catalog reads are version-stamped
CATALOG_PSEUDO_TABLE = "__catalog__"


class BranchState:
    __slots__ = (
        "id",
        "parent_id",
        "fork_seq",
        "fork_epoch",
        "status",
        "tables",
        "write_log",
        "ddl_version",
    )

    def __init__(self, branch_id: int, parent_id: Optional[int], fork_seq: int):
        self.id = branch_id
        self.parent_id = parent_id
        self.fork_seq = fork_seq
        self.fork_epoch: dict[str, int] = {}  # table -> version at fork
        self.status = "active"  # active | rolled_back | merged
        self.tables: dict[str, TableState] = {}
        # Append-only rows of (landed_seq, event_seq, writer, table,
        # key, loc).  landed_seq orders the entry on THIS branch's
        # timeline (fork cutoffs filter on it); (event_seq, writer) is
        # the logical write event, preserved when merges copy rows, so
        # later merges can tell "descends from" apart from "concurrent
        # with".  Keys are primary key values, or synthetic unique ids
        # for tables without one.
        self.write_log: list[tuple] = []
        self.ddl_version = 0


class ColumnStats:
    __slots__ = ("n_distinct", "n_null", "min_text", "max_text", "distinct_sample")

    def __init__(self, n_distinct, n_null, min_text, max_text, distinct_sample):
        self.n_distinct = n_distinct
        self.n_null = n_null
        self.min_text = min_text
        self.max_text = max_text
        # capped distinct values, storage order; used by locate and
        # empty-result diagnosis
        self.distinct_sample = distinct_sample


STATS_DISTINCT_CAP = 10_000


class Database:
    def __init__(self, chunk_capacity: int = DEFAULT_CHUNK_CAPACITY):
        self.chunk_capacity = chunk_capacity
        self.registry = SegmentRegistry()
        self.lock = threading.RLock()
        self.global_seq = 0
        self.branches: dict[int, BranchState] = {
            MAIN_BRANCH: BranchState(MAIN_BRANCH, None, 0)
        }
        self._branch_counter = 0
        self._synthetic_counter = 0
        self._graveyard: list = []
        # (branch_id, table) -> (version, {column: ColumnStats})
        self._stats_cache: dict = {}

    # ---- branch access ---------------------------------------------------

    def branch(self, branch_id: int) -> BranchState:
        try:
            return self.branches[branch_id]
        except KeyError:
            raise BranchError(f"unknown branch {branch_id!r}")

    def active_branch(self, branch_id: int) -> BranchState:
        br = self.branch(branch_id)
        if br.status != "active":
            raise BranchError(f"branch {branch_id!r} is {br.status}")
        return br

    def table_state(self, branch_id: int, table: str) -> TableState:
        br = self.active_branch(branch_id)
        try:
            return br.tables[table]
        except KeyError:
            raise SchemaError(f"unknown table {table!r}")

    # ---- DDL ---------------------------------------------------------------

    def create_table(
        self,
        name: str,
        columns: Iterable[tuple[str, str]],
        primary_key: Optional[str] = None,
        branch_id: int = MAIN_BRANCH,
    ) -> Schema:
        with self.lock:
            if branch_id != MAIN_BRANCH:
                raise BranchError("tables can only be created on the mainline")
            br = self.active_branch(branch_id)
            if name in VIRTUAL_TABLES:
                raise SchemaError(f"{name!r} is a reserved catalog table name")
            if name in br.tables:
                raise SchemaError(f"table {name!r} already exists")
            schema = Schema(name, tuple(Column(n, t) for n, t in columns), primary_key)
            br.tables[name] = TableState(schema, self.registry, self.chunk_capacity)
            br.ddl_version += 1
            return schema

    # ---- writes ------------------------------------------------------------

    def insert_rows(self, table: str, rows: Iterable, branch_id: int = MAIN_BRANCH) -> int:
        """Strict insert: duplicate primary keys are an error.

        Returns the table's new version.
        """
        return self.write(branch_id, table, rows, upsert=False)

    def write(self, branch_id: int, table: str, rows: Iterable, upsert: bool = True) -> int:
        """Apply one write batch; returns the table's version after it.

        An empty batch commits nothing and does not bump the version.
        """
        with self.lock:
            br = self.active_branch(branch_id)
            state = self.table_state(branch_id, table)
            schema = state.schema
            ncols = len(schema.columns)
            pk_idx = schema.pk_index

            coerced = []
            for row in rows:
                row = tuple(row)
                if len(row) != ncols:
                    raise SchemaError(
                        f"{table}: row has {len(row)} values, schema has {ncols}"
                    )
                out = tuple(
                    coerce_value(v, c.type, f"{table}.{c.name}")
                    for v, c in zip(row, schema.columns)
                )
                if pk_idx is not None and out[pk_idx] is None:
                    raise TypeMismatchError(f"{table}: primary key must not be null")
                coerced.append(out)

            if not coerced:
                return state.version

            self.global_seq += 1
            seq = self.global_seq
            for out in coerced:
                if pk_idx is not None:
                    key = out[pk_idx]
                    loc = state.index.get(key)
                    if loc is not None:
                        if not upsert:
                            raise SchemaError(
                                f"{table}: duplicate primary key {key!r}"
                            )
                        state.update_row(loc, out)
                    else:
                        loc = state.append_row(out)
                        state.index.put(key, loc)
                else:
                    self._synthetic_counter += 1
                    key = ("@", self._synthetic_counter)
                    loc = state.append_row(out)
                br.write_log.append((seq, seq, branch_id, table, key, loc))
            state.version += 1
            return state.version

    def apply_merge_rows(self, target_id: int, table: str, items: list) -> int:
        """Upsert rows copied by a merge.  Entries land on the target's
        timeline at a fresh sequence number but keep each row's original
        (event_seq, writer) identity.

        ``items`` is a list of (key, row, event_seq, writer) with rows
        already coerced by the original write.
        """
        with self.lock:
            br = self.active_branch(target_id)
            state = self.table_state(target_id, table)
            pk_idx = state.schema.pk_index
            if not items:
                return 0
            self.global_seq += 1
            landed = self.global_seq
            for key, row, event_seq, writer in items:
                if pk_idx is not None:
                    loc = state.index.get(key)
                    if loc is not None:
                        state.update_row(loc, row)
                    else:
                        loc = state.append_row(row)
                        state.index.put(key, loc)
                else:
                    loc = state.append_row(row)
                br.write_log.append((landed, event_seq, writer, table, key, loc))
            state.version += 1
            return len(items)

    # ---- reads -------------------------------------------------------------

    def schema_of(self, branch_id: int, table: str) -> Schema:
        if table in VIRTUAL_TABLES:
            self.active_branch(branch_id)
            return VIRTUAL_TABLES[table]
        return self.table_state(branch_id, table).schema

    def list_tables(self, branch_id: int) -> list[str]:
        return sorted(self.active_branch(branch_id).tables)

    def row_count(self, branch_id: int, table: str) -> int:
        if table == CATALOG_TABLES:
            return len(self.active_branch(branch_id).tables)
        if table == CATALOG_COLUMNS:
            br = self.active_branch(branch_id)
            return sum(len(st.schema.columns) for st in br.tables.values())
        return self.table_state(branch_id, table).n_rows

    def chunk_view(self, branch_id: int, table: str):
        """(chunk row-lists, total rows, capacity) for positional access.

        All chunks are full except possibly the last, so row i lives at
        chunks[i // capacity][i % capacity].  Virtual tables come back as
        one synthetic chunk.  The lists are live storage; do not mutate.
        """
        if table in VIRTUAL_TABLES:
            rows = list(self.scan_rows(branch_id, table))
            return [rows], len(rows), max(len(rows), 1)
        st = self.table_state(branch_id, table)
        return [seg.rows for seg in st.chunks], st.n_rows, st.capacity

    def scan_rows(self, branch_id: int, table: str):
        """Yield row tuples; handles the two virtual catalog tables."""
        if table == CATALOG_TABLES:
            br = self.active_branch(branch_id)
            for name in sorted(br.tables):
                st = br.tables[name]
                yield (name, st.n_rows, st.version)
            return
        if table == CATALOG_COLUMNS:
            br = self.active_branch(branch_id)
            for name in sorted(br.tables):
                st = br.tables[name]
                stats = self.column_stats(branch_id, name)
                for col in st.schema.columns:
                    cs = stats[col.name]
                    yield (
                        name,
                        col.name,
                        col.type,
                        cs.n_distinct,
                        cs.n_null,
                        cs.min_text,
                        cs.max_text,
                    )
            return
        yield from self.table_state(branch_id, table).scan()

    def table_version(self, branch_id: int, table: str) -> int:
        if table in VIRTUAL_TABLES:
            return self.catalog_version(branch_id)
        return self.table_state(branch_id, table).version

    def catalog_version(self, branch_id: int) -> int:
        """Monotone stamp covering schema plus every table version."""
        br = self.active_branch(branch_id)
        return br.ddl_version + sum(st.version for st in br.tables.values())

    def column_stats(self, branch_id: int, table: str) -> dict[str, ColumnStats]:
        state = self.table_state(branch_id, table)
        cache_key = (branch_id, table)
        hit = self._stats_cache.get(cache_key)
        if hit is not None and hit[0] == state.version:
            return hit[1]
        with self.lock:
            stats = self._compute_stats(state)
            self._stats_cache[cache_key] = (state.version, stats)
            return stats

    def _compute_stats(self, state: TableState) -> dict[str, ColumnStats]:
        schema = state.schema
        n = len(schema.columns)
        distinct: list[dict] = [dict() for _ in range(n)]
        nulls = [0] * n
        mins: list[Value] = [None] * n
        maxs: list[Value] = [None] * n
        for row in state.scan():
            for i, v in enumerate(row):
                if v is None:
                    nulls[i] += 1
                    continue
                d = distinct[i]
                if v not in d and len(d) < STATS_DISTINCT_CAP:
                    d[v] = None
                if mins[i] is None or v < mins[i]:
                    mins[i] = v
                if maxs[i] is None or v > maxs[i]:
                    maxs[i] = v
        out = {}
        for i, col in enumerate(schema.columns):
            out[col.name] = ColumnStats(
                n_distinct=len(distinct[i]),
                n_null=nulls[i],
                min_text=value_to_text(mins[i]),
                max_text=value_to_text(maxs[i]),
                distinct_sample=list(distinct[i]),
            )
        return out

    # ---- fork / rollback plumbing (policy lives in branching.py) ----------

    def fork_branch(self, parent_id: int) -> int:
        with self.lock:
            parent = self.active_branch(parent_id)
            self._branch_counter += 1
            new_id = self._branch_counter
            child = BranchState(new_id, parent_id, self.global_seq)
            child.ddl_version = parent.ddl_version
            child.fork_epoch = {n: st.version for n, st in parent.tables.items()}
            child.tables = {name: st.fork() for name, st in parent.tables.items()}
            self.branches[new_id] = child
            return new_id

    def write_set(self, branch_id: int) -> set[tuple]:
        """(table, key) pairs this branch has written since its fork."""
        br = self.branch(branch_id)
        return {(entry[3], entry[4]) for entry in br.write_log}

    def release_branch(self, branch_id: int, new_status: str):
        """Drop a branch's storage references; defer deallocation."""
        with self.lock:
            br = self.branch(branch_id)
            for state in br.tables.values():
                for seg in state.chunks:
                    seg.decref()
                self._graveyard.append((state.chunks, state.index))
                state.chunks = []
                state.index = None
                state.n_rows = 0
            br.tables = {}
            br.status = new_status
            for key in [k for k in self._stats_cache if k[0] == branch_id]:
                del self._stats_cache[key]

    def reclaim(self):
        """Actually free structures parked by rollback/merge."""
        with self.lock:
            self._graveyard.clear()

    # ---- CSV ingestion ------------------------------------------------------

    def load_csv(
        self,
        path: str,
        table: str,
        primary_key: Optional[str] = None,
    ) -> int:
        """Create ``table`` from a headered CSV file and load every row.

        Type inference per column tries int64, then float64, then falls
        back to text.  Empty cells and the literal ``NULL`` are nulls.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: empty file, header row required")
            if any(not h.strip() for h in header):
                raise SchemaError(f"{path}: blank column name in header")
            raw_rows = [row for row in reader]
        for row in raw_rows:
            if len(row) != len(header):
                raise SchemaError(
                    f"{path}: row has {len(row)} cells, header has {len(header)}"
                )
        types = [_infer_csv_type(i, raw_rows) for i in range(len(header))]
        rows = [
            tuple(_parse_csv_cell(cell, t) for cell, t in zip(row, types))
            for row in raw_rows
        ]
        self.create_table(table, list(zip(header, types)), primary_key)
        return self.insert_rows(table, rows)


def _is_csv_null(cell: str) -> bool:
    return cell == "" or cell == "NULL"


def _infer_csv_type(col: int, rows: list) -> str:
    saw_value = False
    all_int = True
    all_float = True
    for row in rows:
        cell = row[col]
        if _is_csv_null(cell):
            continue
        saw_value = True
        if all_int and not _looks_int(cell):
            all_int = False
        if all_float and not _looks_float(cell):
            all_float = False
        if not all_float:
            break
    if not saw_value:
        return TEXT
    if all_int:
        return INT64
    if all_float:
        return FLOAT64
    return TEXT


def _looks_int(cell: str) -> bool:
    s = cell.strip()
    if s and s[0] in "+-":
        s = s[1:]
    return s.isdigit()


def _looks_float(cell: str) -> bool:
    s = cell.strip().lower()
    if s in ("nan", "inf", "-inf", "+inf", "infinity", "-infinity"):
        return False
    try:
        float(s)
        return True
    except ValueError:
        return False


def _parse_csv_cell(cell: str, ctype: str) -> Value:
    if _is_csv_null(cell):
        return None
    if ctype == INT64:
        return int(cell.strip())
    if ctype == FLOAT64:
        return float(cell.strip())
    return cell


class BranchCatalog:
    """One branch's read view: what the planner and executor consume.

    Pinning the branch here keeps plan resolution, cost estimation, and
    execution all looking at a single consistent world.
    """

    def __init__(self, db: Database, branch_id: int):
        self.db = db
        self.branch_id = branch_id

    def schema_of(self, table: str) -> Schema:
        return self.db.schema_of(self.branch_id, table)

    def has_table(self, table: str) -> bool:
        if table in VIRTUAL_TABLES:
            return True
        return table in self.db.active_branch(self.branch_id).tables

    def tables(self) -> list[str]:
        return self.db.list_tables(self.branch_id)

    def row_count(self, table: str) -> int:
        return self.db.row_count(self.branch_id, table)

    def scan_rows(self, table: str):
        return self.db.scan_rows(self.branch_id, table)

    def table_version(self, table: str) -> int:
        return self.db.table_version(self.branch_id, table)

    def column_stats(self, table: str) -> dict[str, ColumnStats]:
        if table in VIRTUAL_TABLES:
            # virtual tables are tiny; compute fresh minimal stats
            schema = VIRTUAL_TABLES[table]
            rows = list(self.db.scan_rows(self.branch_id, table))
            stats = {}
            for i, col in enumerate(schema.columns):
                vals = [r[i] for r in rows]
                nn = [v for v in vals if v is not None]
                distinct = list(dict.fromkeys(nn))
                stats[col.name] = ColumnStats(
                    n_distinct=len(distinct),
                    n_null=len(vals) - len(nn),
                    min_text=value_to_text(min(nn)) if nn else None,
                    max_text=value_to_text(max(nn)) if nn else None,
                    distinct_sample=distinct[:STATS_DISTINCT_CAP],
                )
            return stats
        return self.db.column_stats(self.branch_id, table)

    def n_distinct(self, table: str, column: str) -> int:
        return self.column_stats(table)[column].n_distinct

    def chunk_view(self, table: str):
        return self.db.chunk_view(self.branch_id, table)

    def source_version_entry(self, table: str) -> tuple[str, int]:
        """(name, version) pair recorded in result provenance."""
        if table in VIRTUAL_TABLES:
            return (CATALOG_PSEUDO_TABLE, self.db.catalog_version(self.branch_id))
        return (table, self.db.table_version(self.branch_id, table))
