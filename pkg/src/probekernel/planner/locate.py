"""Corpus-wide fuzzy lookup: where does a phrase live in the data?

Scores every candidate (table names, column names, sampled cell values)
by trigram Jaccard similarity against the phrase and returns the
non-zero matches best first.  Cell candidates come from each column's
cached distinct-value sample, capped at 10,000 values per column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..relational.types import value_to_text
from ..similarity import similarity

VALID_SCOPES = ("table_names", "column_names", "cells")


@dataclass(frozen=True)
class LocateMatch:
    kind: str  # "table" | "column" | "cell"
    table: str
    column: str  # "" for table matches
    value: str  # the text that was scored
    score: float
    row_key: Optional[object] = None

    def to_wire(self) -> dict:
        doc = {
            "kind": self.kind,
            "table": self.table,
            "column": self.column,
            "value": self.value,
            "score": self.score,
        }
        if self.row_key is not None:
            doc["row_key"] = self.row_key
        return doc


def locate(phrase: str, catalog, scope, limit: int = 20):
    """Rank candidate tables/columns/cells by similarity to `phrase`.

    Ties break lexicographically by (table, column, value); zero-score
    candidates are dropped.
    """
    if not phrase or not phrase.strip():
        raise ValueError("empty locate phrase")
    bad = [s for s in scope if s not in VALID_SCOPES]
    if bad:
        raise ValueError(f"unknown locate scope {bad[0]!r}")
    matches = []
    tables = catalog.tables()
    if "table_names" in scope:
        for t in tables:
            s = similarity(phrase, t)
            if s > 0.0:
                matches.append(LocateMatch("table", t, "", t, s))
    if "column_names" in scope:
        for t in tables:
            for col in catalog.schema_of(t).columns:
                s = similarity(phrase, col.name)
                if s > 0.0:
                    matches.append(LocateMatch("column", t, col.name, col.name, s))
    if "cells" in scope:
        for t in tables:
            stats = catalog.column_stats(t)
            for col_name, cs in stats.items():
                for raw in cs.distinct_sample:
                    text = value_to_text(raw)
                    s = similarity(phrase, text)
                    if s > 0.0:
                        matches.append(LocateMatch("cell", t, col_name, text, s))
    matches.sort(key=lambda m: (-m.score, m.table, m.column, m.value))
    return matches[:limit]
