"""Logical plan trees and their canonical serialization.

The canonical text is the identity layer for every cache, dedup and
redundancy statistic in the engine, so its byte layout is fixed:

    node  := KIND "(" args ")"                      leaf
           | KIND "(" args ";" child {"," child} ")"
    KIND  := "TS" | "FI" | "PR" | "HJ" | "UA" | "OT"

Per-kind args:

    TS  table name
    FI  predicate text
    PR  comma list of output column keys (order significant)
    HJ  leftkey=rightkey, keys travel with their child
    UA  comma list of group refs, "|", comma list of aggregates
    OT  "limit:N" | "sort:ref dir[,ref dir...]" | "distinct"

Predicate text:

    ref op literal              op in = != < <= > >=
    like(ref,'pattern')
    in(ref,lit,lit,...)
    semlike(ref,'phrase',T)
    and(p,p,...) / or(p,p,...)

Literals: integers as plain digits, floats via shortest round-trip
repr, strings single-quoted with '' escaping, booleans true/false.
Two plans are "the same work" exactly when these strings are equal;
the 64-bit FNV-1a of the string is the fingerprint used everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from ..relational.types import BOOL, FLOAT64, INT64, TEXT

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(text: str) -> int:
    """FNV-1a over the UTF-8 bytes of `text`, 64-bit."""
    h = FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class Fingerprint:
    value: int
    canonical_text: str

    @property
    def hex(self) -> str:
        return f"{self.value:016x}"


Literal = Union[int, float, str, bool, None]


def literal_text(value: Literal) -> str:
    # bool first: bool is an int subclass
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if value is None:
        return "null"
    raise TypeError(f"unsupported literal {value!r}")


@dataclass(frozen=True)
class ColumnRef:
    """Fully resolved, lowercase table.column reference."""

    table: str
    column: str

    @property
    def text(self) -> str:
        return f"{self.table}.{self.column}"


# ---------------------------------------------------------------- predicates


class Predicate:
    __slots__ = ()

    def canonical(self) -> str:
        raise NotImplementedError

    def refs(self) -> Iterator[ColumnRef]:
        raise NotImplementedError


@dataclass(frozen=True)
class Comparison(Predicate):
    ref: ColumnRef
    op: str  # = != < <= > >=
    value: Literal

    def canonical(self) -> str:
        return f"{self.ref.text}{self.op}{literal_text(self.value)}"

    def refs(self):
        yield self.ref


@dataclass(frozen=True)
class LikePred(Predicate):
    ref: ColumnRef
    pattern: str

    def canonical(self) -> str:
        return f"like({self.ref.text},{literal_text(self.pattern)})"

    def refs(self):
        yield self.ref


@dataclass(frozen=True)
class InPred(Predicate):
    ref: ColumnRef
    values: tuple

    def canonical(self) -> str:
        inner = ",".join(literal_text(v) for v in self.values)
        return f"in({self.ref.text},{inner})"

    def refs(self):
        yield self.ref


@dataclass(frozen=True)
class SemanticLikePred(Predicate):
    """Trigram-similarity match: true when sim(value, phrase) >= threshold."""

    ref: ColumnRef
    phrase: str
    threshold: float

    def canonical(self) -> str:
        return (
            f"semlike({self.ref.text},{literal_text(self.phrase)},"
            f"{repr(float(self.threshold))})"
        )

    def refs(self):
        yield self.ref


@dataclass(frozen=True)
class AndPred(Predicate):
    parts: tuple

    def canonical(self) -> str:
        return "and(" + ",".join(p.canonical() for p in self.parts) + ")"

    def refs(self):
        for p in self.parts:
            yield from p.refs()


@dataclass(frozen=True)
class OrPred(Predicate):
    parts: tuple

    def canonical(self) -> str:
        return "or(" + ",".join(p.canonical() for p in self.parts) + ")"

    def refs(self):
        for p in self.parts:
            yield from p.refs()


def canonicalize_predicate(pred: Predicate) -> Predicate:
    """Sort commutative parts, flatten same-kind nesting, order IN lists."""
    if isinstance(pred, AndPred):
        flat: list = []
        for p in pred.parts:
            cp = canonicalize_predicate(p)
            if isinstance(cp, AndPred):
                flat.extend(cp.parts)
            else:
                flat.append(cp)
        if len(flat) == 1:
            return flat[0]
        return AndPred(tuple(sorted(flat, key=lambda p: p.canonical())))
    if isinstance(pred, OrPred):
        flat = []
        for p in pred.parts:
            cp = canonicalize_predicate(p)
            if isinstance(cp, OrPred):
                flat.extend(cp.parts)
            else:
                flat.append(cp)
        if len(flat) == 1:
            return flat[0]
        return OrPred(tuple(sorted(flat, key=lambda p: p.canonical())))
    if isinstance(pred, InPred):
        return InPred(pred.ref, tuple(sorted(pred.values, key=literal_text)))
    return pred


# ---------------------------------------------------------------- aggregates


@dataclass(frozen=True)
class AggSpec:
    func: str  # count sum avg min max
    ref: Optional[ColumnRef]  # None only for count(*)
    distinct: bool = False

    def canonical(self) -> str:
        if self.ref is None:
            return "count(*)"
        inner = f"distinct {self.ref.text}" if self.distinct else self.ref.text
        return f"{self.func}({inner})"

    def output_type(self, arg_type: Optional[str]) -> str:
        if self.func == "count":
            return INT64
        if self.func == "avg":
            return FLOAT64
        if self.func == "sum":
            return FLOAT64 if arg_type == FLOAT64 else INT64
        return arg_type or TEXT  # min/max keep the argument type


@dataclass(frozen=True)
class OutCol:
    """One output column of a plan node.

    `key` is the canonical identity (table.column for pass-through refs,
    the aggregate text otherwise) and is what parent nodes use to find
    their inputs; `name` is the display name put on result sets.
    """

    key: str
    name: str
    ctype: str


# ---------------------------------------------------------------- plan nodes


class PlanNode:
    """Immutable plan tree node; equality and hashing are by identity."""

    __slots__ = ("kind", "children", "canonical_text", "size", "output", "_fp")

    kind: str
    children: tuple
    canonical_text: str
    size: int
    output: tuple

    def __init__(self, kind: str, args_text: str, children, output):
        self.kind = kind
        self.children = tuple(children)
        self.output = tuple(output)
        self.size = 1 + sum(c.size for c in self.children)
        if self.children:
            inner = ",".join(c.canonical_text for c in self.children)
            self.canonical_text = f"{kind}({args_text};{inner})"
        else:
            self.canonical_text = f"{kind}({args_text})"
        self._fp = None

    @property
    def fingerprint_value(self) -> int:
        if self._fp is None:
            self._fp = fnv1a_64(self.canonical_text)
        return self._fp

    def output_keys(self) -> list:
        return [c.key for c in self.output]

    def __repr__(self):
        return f"<{type(self).__name__} {self.canonical_text[:80]}>"


class ScanNode(PlanNode):
    __slots__ = ("table",)

    def __init__(self, table: str, output):
        self.table = table
        super().__init__("TS", table, (), output)


class FilterNode(PlanNode):
    __slots__ = ("predicate",)

    def __init__(self, predicate: Predicate, child: PlanNode):
        self.predicate = predicate
        super().__init__("FI", predicate.canonical(), (child,), child.output)


class ProjectNode(PlanNode):
    def __init__(self, cols, child: PlanNode):
        args = ",".join(c.key for c in cols)
        super().__init__("PR", args, (child,), cols)


class JoinNode(PlanNode):
    """Inner hash join on a single equality; each key belongs to its child."""

    __slots__ = ("left_key", "right_key")

    def __init__(self, left_key: ColumnRef, right_key: ColumnRef, left, right):
        self.left_key = left_key
        self.right_key = right_key
        args = f"{left_key.text}={right_key.text}"
        super().__init__("HJ", args, (left, right), left.output + right.output)


class AggregateNode(PlanNode):
    __slots__ = ("group", "aggs")

    def __init__(self, group, aggs, child: PlanNode):
        self.group = tuple(group)
        self.aggs = tuple(aggs)
        args = (
            ",".join(r.text for r in self.group)
            + "|"
            + ",".join(a.canonical() for a in self.aggs)
        )
        child_types = {c.key: c.ctype for c in child.output}
        out = []
        for r in self.group:
            out.append(OutCol(r.text, r.column, child_types[r.text]))
        for a in self.aggs:
            arg_type = child_types[a.ref.text] if a.ref is not None else None
            out.append(OutCol(a.canonical(), _display_agg(a), a.output_type(arg_type)))
        super().__init__("UA", args, (child,), out)


def _display_agg(a: AggSpec) -> str:
    if a.ref is None:
        return "count(*)"
    inner = f"distinct {a.ref.column}" if a.distinct else a.ref.column
    return f"{a.func}({inner})"


class OtherNode(PlanNode):
    """Sort, Limit and Distinct share one wrapper kind.

    Sort payload is a tuple of (output key, "asc"|"desc") pairs; keys are
    column identities or aggregate texts from the child's output.
    """

    __slots__ = ("op", "payload")

    def __init__(self, op: str, payload, child: PlanNode):
        self.op = op
        self.payload = payload
        if op == "limit":
            args = f"limit:{payload}"
        elif op == "sort":
            args = "sort:" + ",".join(f"{k} {d}" for k, d in payload)
        elif op == "distinct":
            args = "distinct"
        else:
            raise ValueError(f"unknown OT op {op!r}")
        super().__init__("OT", args, (child,), child.output)


# ------------------------------------------------------------ canonical form


def canonicalize(plan: PlanNode) -> PlanNode:
    """Return the canonical form: sorted conjuncts/disjuncts/IN lists and
    join children ordered by canonical text (keys swap with their side).

    Idempotent; output column keys are preserved so consumers that look
    inputs up by key are unaffected by join-side swaps.
    """
    if isinstance(plan, ScanNode):
        return plan
    kids = [canonicalize(c) for c in plan.children]
    if isinstance(plan, FilterNode):
        return FilterNode(canonicalize_predicate(plan.predicate), kids[0])
    if isinstance(plan, JoinNode):
        left, right = kids
        lk, rk = plan.left_key, plan.right_key
        if right.canonical_text < left.canonical_text:
            left, right = right, left
            lk, rk = rk, lk
        return JoinNode(lk, rk, left, right)
    if isinstance(plan, ProjectNode):
        return ProjectNode(plan.output, kids[0])
    if isinstance(plan, AggregateNode):
        return AggregateNode(plan.group, plan.aggs, kids[0])
    if isinstance(plan, OtherNode):
        return OtherNode(plan.op, plan.payload, kids[0])
    raise TypeError(f"unknown node {plan!r}")


def iter_nodes(plan: PlanNode) -> Iterator[PlanNode]:
    yield plan
    for c in plan.children:
        yield from iter_nodes(c)


def enumerate_subplans(plan: PlanNode):
    """One (subtree, size) entry per node."""
    return [(n, n.size) for n in iter_nodes(plan)]


def fingerprint(plan: PlanNode) -> Fingerprint:
    return Fingerprint(plan.fingerprint_value, plan.canonical_text)


# ------------------------------------------------------------- subplan stats


@dataclass
class Bucket:
    total: int = 0
    distinct: int = 0

    @property
    def distinct_fraction(self) -> float:
        return self.distinct / self.total if self.total else 0.0


@dataclass
class SubplanStats:
    by_size: dict = field(default_factory=dict)  # size -> Bucket
    by_kind: dict = field(default_factory=dict)  # kind -> Bucket

    def to_dict(self) -> dict:
        return {
            "by_size": {
                str(s): {
                    "total": b.total,
                    "distinct": b.distinct,
                    "distinct_fraction": b.distinct_fraction,
                }
                for s, b in sorted(self.by_size.items())
            },
            "by_kind": {
                k: {
                    "total": b.total,
                    "distinct": b.distinct,
                    "distinct_fraction": b.distinct_fraction,
                }
                for k, b in sorted(self.by_kind.items())
            },
        }


def subexpression_stats(plans) -> SubplanStats:
    """Bucket every subtree of every plan by size and by root kind.

    Distinctness is fingerprint equality, so two occurrences count once
    per bucket exactly when their canonical texts agree.
    """
    size_seen: dict = {}
    kind_seen: dict = {}
    stats = SubplanStats()
    for plan in plans:
        for node in iter_nodes(plan):
            fp = node.fingerprint_value
            b = stats.by_size.setdefault(node.size, Bucket())
            b.total += 1
            seen = size_seen.setdefault(node.size, set())
            if fp not in seen:
                seen.add(fp)
                b.distinct += 1
            b = stats.by_kind.setdefault(node.kind, Bucket())
            b.total += 1
            seen = kind_seen.setdefault(node.kind, set())
            if fp not in seen:
                seen.add(fp)
                b.distinct += 1
    return stats
