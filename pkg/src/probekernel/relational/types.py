"""Column types, schemas, and result sets.

Four storage types: int64, float64, text, bool.  Every column is
nullable.  The only implicit widening is int64 -> float64; everything
else is a type error at write or resolve time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from ..errors import SchemaError, TypeMismatchError

Value = Union[int, float, str, bool, None]

INT64 = "int64"
FLOAT64 = "float64"
TEXT = "text"
BOOL = "bool"

ColumnType = str
COLUMN_TYPES = (INT64, FLOAT64, TEXT, BOOL)

_INT64_MIN = -(2**63)
_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType


@dataclass(frozen=True)
class Schema:
    """Immutable table shape. ``primary_key`` names a column or is None."""

    name: str
    columns: tuple[Column, ...]
    primary_key: Optional[str] = None

    def __post_init__(self):
        seen = set()
        for col in self.columns:
            if col.type not in COLUMN_TYPES:
                raise SchemaError(f"unknown column type {col.type!r} in {self.name}")
            if col.name in seen:
                raise SchemaError(f"duplicate column {col.name!r} in {self.name}")
            seen.add(col.name)
        if self.primary_key is not None and self.primary_key not in seen:
            raise SchemaError(
                f"primary key {self.primary_key!r} is not a column of {self.name}"
            )

    def col_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise SchemaError(f"no column {name!r} in table {self.name}")

    def has_column(self, name: str) -> bool:
        return any(col.name == name for col in self.columns)

    def col_type(self, name: str) -> ColumnType:
        return self.columns[self.col_index(name)].type

    @property
    def pk_index(self) -> Optional[int]:
        if self.primary_key is None:
            return None
        return self.col_index(self.primary_key)


def coerce_value(value: Value, ctype: ColumnType, context: str) -> Value:
    """Validate ``value`` against ``ctype``; widen int -> float64.

    bool is not an int here even though Python says so.
    """
    if value is None:
        return None
    if ctype == INT64:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeMismatchError(f"{context}: expected int64, got {value!r}")
        if not (_INT64_MIN <= value <= _INT64_MAX):
            raise TypeMismatchError(f"{context}: {value} out of int64 range")
        return value
    if ctype == FLOAT64:
        if isinstance(value, bool):
            raise TypeMismatchError(f"{context}: expected float64, got {value!r}")
        if isinstance(value, int):
            return float(value)
        if isinstance(value, float):
            return value
        raise TypeMismatchError(f"{context}: expected float64, got {value!r}")
    if ctype == TEXT:
        if not isinstance(value, str):
            raise TypeMismatchError(f"{context}: expected text, got {value!r}")
        return value
    if ctype == BOOL:
        if not isinstance(value, bool):
            raise TypeMismatchError(f"{context}: expected bool, got {value!r}")
        return value
    raise SchemaError(f"unknown column type {ctype!r}")


def value_to_text(value: Value) -> Optional[str]:
    """Canonical text rendering used by catalog stats and locate."""
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ResultSet:
    """Materialized query output.

    ``source_version`` records the version of every base table the
    result was computed from, so downstream caching can detect
    staleness without re-reading storage.
    """

    columns: tuple[tuple[str, ColumnType], ...]
    rows: list[tuple]
    exact: bool = True
    source_version: dict[str, int] = field(default_factory=dict)

    @property
    def column_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    def col(self, name: str) -> list[Value]:
        idx = self.column_names.index(name)
        return [row[idx] for row in self.rows]

    def to_wire(self) -> dict:
        return {
            "columns": [{"name": n, "type": t} for n, t in self.columns],
            "rows": [list(r) for r in self.rows],
            "exact": self.exact,
            "source_version": dict(sorted(self.source_version.items())),
        }


def rows_as_multiset(rs: ResultSet) -> dict:
    """Order-insensitive fingerprintable view, for result comparisons."""
    counts: dict = {}
    for row in rs.rows:
        counts[row] = counts.get(row, 0) + 1
    return counts
