"""Agentic memory: a version-stamped, principal-scoped fact store.

Facts are grounding artifacts agents accumulate while working: probe
results (keyed by plan fingerprint), schema summaries, column stats,
value-format notes, join hints, feedback notes.  Every fact records the
table versions it was derived from; staleness is checked lazily at
read time against the live catalog, so nothing is ever served as fresh
when the underlying data moved on.  Re-putting a key keeps the old
fact, permanently stale, and makes the new one the default read.

Persistence is an append-only NDJSON log (one fact per line, full
field set); replaying the log rebuilds the store state exactly.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import SchemaError
from .relational.database import CATALOG_PSEUDO_TABLE, MAIN_BRANCH
from .similarity import similarity

FACT_KINDS = (
    "probe_result",
    "schema_summary",
    "column_stats",
    "value_format",
    "join_hint",
    "feedback_note",
)

# Metadata-derived facts any principal may read; everything else is
# private to the principal that created it.
SHAREABLE_KINDS = ("schema_summary", "column_stats")


@dataclass
class MemoryFact:
    fact_key: str
    kind: str
    scope: tuple  # of (table,) or (table, column) tuples
    content: dict
    note: str
    data_versions: dict  # table -> version stamped at creation
    created_by: str
    principal: str
    created_turn: int
    stale: bool = False
    seq: int = 0  # store-assigned recency counter

    def to_doc(self) -> dict:
        return {
            "fact_key": self.fact_key,
            "kind": self.kind,
            "scope": [list(s) for s in self.scope],
            "content": self.content,
            "note": self.note,
            "data_versions": dict(self.data_versions),
            "created_by": self.created_by,
            "principal": self.principal,
            "created_turn": self.created_turn,
            "stale": self.stale,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "MemoryFact":
        return cls(
            fact_key=doc["fact_key"],
            kind=doc["kind"],
            scope=tuple(tuple(s) for s in doc["scope"]),
            content=doc["content"],
            note=doc["note"],
            data_versions=dict(doc["data_versions"]),
            created_by=doc["created_by"],
            principal=doc["principal"],
            created_turn=doc["created_turn"],
            stale=bool(doc.get("stale", False)),
        )


@dataclass(frozen=True)
class MemoryQuery:
    mode: str  # by_key | by_scope | by_similarity
    principal: str
    key: Optional[str] = None
    scope: tuple = ()
    phrase: str = ""
    top_k: int = 5


class MemoryStore:
    """In-memory fact index with an optional append-only NDJSON log."""

    def __init__(self, db, log_path: Optional[str] = None):
        self.db = db
        self.log_path = log_path
        self._facts: dict = {}  # fact_key -> list of versions, newest last
        self._seq = 0
        self._lock = threading.Lock()
        if log_path and os.path.exists(log_path):
            with open(log_path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self._absorb(MemoryFact.from_doc(json.loads(line)))

    # ------------------------------------------------------------- writing

    def put_fact(self, fact: MemoryFact) -> str:
        if fact.kind not in FACT_KINDS:
            raise SchemaError(f"unknown fact kind {fact.kind!r}")
        for entry in fact.scope:
            table = entry[0]
            if table == CATALOG_PSEUDO_TABLE:
                continue
            branch = self.db.active_branch(MAIN_BRANCH)
            if table not in branch.tables:
                raise SchemaError(f"fact scope references unknown table {table!r}")
        with self._lock:
            self._absorb(fact)
            if self.log_path:
                with open(self.log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(fact.to_doc(), separators=(",", ":")) + "\n")
        return fact.fact_key

    def _absorb(self, fact: MemoryFact):
        self._seq += 1
        fact.seq = self._seq
        chain = self._facts.setdefault(fact.fact_key, [])
        for old in chain:
            old.stale = True  # superseded, permanently
        chain.append(fact)

    # ------------------------------------------------------------- reading

    def _current_version(self, table: str) -> Optional[int]:
        branch = self.db.active_branch(MAIN_BRANCH)
        if table == CATALOG_PSEUDO_TABLE:
            return self.db.catalog_version(MAIN_BRANCH)
        if table not in branch.tables:
            return None
        return branch.tables[table].version

    def _refresh_stale(self, fact: MemoryFact) -> MemoryFact:
        """Lazy staleness: version drift flips the flag, never back."""
        if fact.stale:
            return fact
        for table, stamped in fact.data_versions.items():
            current = self._current_version(table)
            if current is None or current > stamped:
                fact.stale = True
                break
        return fact

    def _visible(self, fact: MemoryFact, principal: str) -> bool:
        return fact.principal == principal or fact.kind in SHAREABLE_KINDS

    def _newest(self, key: str) -> Optional[MemoryFact]:
        chain = self._facts.get(key)
        return chain[-1] if chain else None

    def lookup(self, query: MemoryQuery):
        if query.mode == "by_key":
            f = self.by_key(query.key, query.principal)
            return [f] if f is not None else []
        if query.mode == "by_scope":
            return self.by_scope(query.scope, query.principal)
        if query.mode == "by_similarity":
            return self.by_similarity(query.phrase, query.top_k, query.principal)
        raise ValueError(f"unknown memory query mode {query.mode!r}")

    def by_key(self, key: str, principal: str) -> Optional[MemoryFact]:
        fact = self._newest(key)
        if fact is None or not self._visible(fact, principal):
            return None
        return self._refresh_stale(fact)

    def by_scope(self, scope, principal: str):
        """Non-stale facts whose scope touches any queried entry."""
        wanted = [tuple(s) for s in scope]
        out = []
        for chain in self._facts.values():
            fact = chain[-1]
            if not self._visible(fact, principal):
                continue
            if not any(_scopes_touch(fs, qs) for fs in fact.scope for qs in wanted):
                continue
            self._refresh_stale(fact)
            if not fact.stale:
                out.append(fact)
        out.sort(key=lambda f: -f.seq)
        return out

    def by_similarity(self, phrase: str, top_k: int, principal: str):
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        scored = []
        for chain in self._facts.values():
            fact = chain[-1]
            if not self._visible(fact, principal):
                continue
            self._refresh_stale(fact)
            if fact.stale:
                continue
            text = fact.note + " " + " ".join(".".join(s) for s in fact.scope)
            score = similarity(phrase, text)
            if score > 0.0:
                scored.append((score, fact))
        scored.sort(key=lambda t: (-t[0], -t[1].seq))
        return [f for _, f in scored[:top_k]]

    def fact_value_set(self, fact_key: str, principal: Optional[str]) -> Optional[set]:
        """Stored value set of a probe_result fact, for jaccard_to checks."""
        fact = self._newest(fact_key)
        if fact is None:
            return None
        if principal is not None and not self._visible(fact, principal):
            return None
        values = fact.content.get("value_set")
        if values is None:
            return None
        return set(values)

    # ---------------------------------------------------------- revalidate

    def revalidate(
        self,
        fact_key: str,
        catalog=None,
        refresh: bool = False,
        reexecute: Optional[Callable[[MemoryFact], dict]] = None,
    ) -> MemoryFact:
        """Recheck one fact's versions; optionally refresh its content.

        With refresh=True and a reexecute callback, a drifted fact's
        content is recomputed, restamped at current versions, and the
        fact comes back fresh.
        """
        fact = self._newest(fact_key)
        if fact is None:
            raise KeyError(f"no fact {fact_key!r}")
        self._refresh_stale(fact)
        if fact.stale and refresh and reexecute is not None:
            new_content = reexecute(fact)
            versions = {
                t: self._current_version(t)
                for t in fact.data_versions
                if self._current_version(t) is not None
            }
            replacement = MemoryFact(
                fact_key=fact.fact_key,
                kind=fact.kind,
                scope=fact.scope,
                content=new_content,
                note=fact.note,
                data_versions=versions,
                created_by=fact.created_by,
                principal=fact.principal,
                created_turn=fact.created_turn,
            )
            self.put_fact(replacement)
            return replacement
        return fact


def _scopes_touch(a: tuple, b: tuple) -> bool:
    if a[0] != b[0]:
        return False
    if len(a) == 1 or len(b) == 1:
        return True
    return a[1] == b[1]
