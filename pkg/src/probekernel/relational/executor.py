"""Plan execution with per-subtree memoization.

Execution walks the canonical plan tree bottom-up.  When a memo dict is
supplied, every subtree is keyed by its fingerprint: a hit returns the
materialized rows and credits the whole subtree to the cache-hit
counter; a miss executes one operator and records it.  That makes the
work-sharing arithmetic exact — a batch's executed operator count is
the number of distinct subtrees it contains.

Null handling follows SQL: comparisons against null rows are false,
null join keys never match, aggregates skip nulls (except COUNT(*)),
ascending sorts put nulls last and descending sorts put them first.

Memoized rows are shared between plans; callers must treat returned
lists as frozen.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from ..planner.nodes import (
    AggregateNode,
    AndPred,
    Comparison,
    FilterNode,
    InPred,
    JoinNode,
    LikePred,
    OrPred,
    OtherNode,
    PlanNode,
    ProjectNode,
    ScanNode,
    SemanticLikePred,
)
from ..similarity import similarity


@dataclass
class Counters:
    executed_operator_count: int = 0
    cache_hit_operator_count: int = 0


def execute_plan(plan, catalog, memo=None, counters=None, scan_fn=None):
    """Return the output rows (list of tuples) of `plan`.

    memo: dict fingerprint -> rows, shared across a batch at one data
    version.  Never combine memo with scan_fn overrides — sampled rows
    must not leak into the shared cache.
    """
    if memo is not None:
        hit = memo.get(plan.fingerprint_value)
        if hit is not None:
            if counters is not None:
                counters.cache_hit_operator_count += plan.size
            return hit
    rows = _compute(plan, catalog, memo, counters, scan_fn)
    if counters is not None:
        counters.executed_operator_count += 1
    if memo is not None:
        memo[plan.fingerprint_value] = rows
    return rows


def _compute(plan, catalog, memo, counters, scan_fn):
    if isinstance(plan, ScanNode):
        source = scan_fn(plan.table) if scan_fn is not None else catalog.scan_rows(plan.table)
        return [tuple(r) for r in source]
    kids = [
        execute_plan(c, catalog, memo=memo, counters=counters, scan_fn=scan_fn)
        for c in plan.children
    ]
    if isinstance(plan, FilterNode):
        pred = compile_predicate(plan.predicate, _positions(plan.children[0]))
        return [r for r in kids[0] if pred(r)]
    if isinstance(plan, ProjectNode):
        pos = _positions(plan.children[0])
        idx = [pos[c.key] for c in plan.output]
        return [tuple(r[i] for i in idx) for r in kids[0]]
    if isinstance(plan, JoinNode):
        return _hash_join(plan, kids[0], kids[1])
    if isinstance(plan, AggregateNode):
        return _aggregate(plan, kids[0])
    if isinstance(plan, OtherNode):
        if plan.op == "limit":
            return list(kids[0][: plan.payload])
        if plan.op == "distinct":
            seen = set()
            out = []
            for r in kids[0]:
                if r not in seen:
                    seen.add(r)
                    out.append(r)
            return out
        if plan.op == "sort":
            return sort_rows(kids[0], plan.payload, _positions(plan.children[0]))
    raise TypeError(f"unknown node {plan!r}")


def _positions(node: PlanNode) -> dict:
    return {c.key: i for i, c in enumerate(node.output)}


# ------------------------------------------------------------- predicates

_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def like_regex(pattern: str):
    parts = []
    for ch in pattern:
        if ch == "%":
            parts.append(".*")
        elif ch == "_":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def compile_predicate(pred, positions: dict):
    """Build row -> bool for `pred` with columns at `positions`."""
    if isinstance(pred, Comparison):
        i = positions[pred.ref.text]
        op = _CMP[pred.op]
        lit = pred.value
        return lambda r: r[i] is not None and op(r[i], lit)
    if isinstance(pred, LikePred):
        i = positions[pred.ref.text]
        rx = like_regex(pred.pattern)
        return lambda r: r[i] is not None and rx.fullmatch(r[i]) is not None
    if isinstance(pred, InPred):
        i = positions[pred.ref.text]
        wanted = set(pred.values)
        # floats and ints hash alike, so mixed numeric IN lists just work
        return lambda r: r[i] is not None and r[i] in wanted
    if isinstance(pred, SemanticLikePred):
        i = positions[pred.ref.text]
        phrase = pred.phrase
        thr = pred.threshold
        return lambda r: r[i] is not None and similarity(r[i], phrase) >= thr
    if isinstance(pred, AndPred):
        fns = [compile_predicate(p, positions) for p in pred.parts]
        return lambda r: all(f(r) for f in fns)
    if isinstance(pred, OrPred):
        fns = [compile_predicate(p, positions) for p in pred.parts]
        return lambda r: any(f(r) for f in fns)
    raise TypeError(f"unknown predicate {pred!r}")


# ------------------------------------------------------------------- join


def _hash_join(plan: JoinNode, left_rows, right_rows):
    left, right = plan.children
    li = _positions(left)[plan.left_key.text]
    ri = _positions(right)[plan.right_key.text]
    table: dict = {}
    for row in left_rows:
        k = row[li]
        if k is None:
            continue
        table.setdefault(k, []).append(row)
    out = []
    for row in right_rows:
        k = row[ri]
        if k is None:
            continue
        for lrow in table.get(k, ()):
            out.append(lrow + row)
    return out


# -------------------------------------------------------------- aggregate


def _aggregate(plan: AggregateNode, rows):
    child = plan.children[0]
    pos = _positions(child)
    gidx = [pos[r.text] for r in plan.group]
    aidx = [pos[a.ref.text] if a.ref is not None else None for a in plan.aggs]

    if not gidx:
        accs = [_make_acc(a) for a in plan.aggs]
        for row in rows:
            for acc, i in zip(accs, aidx):
                acc.add(row[i] if i is not None else None)
        return [tuple(acc.final() for acc in accs)]

    groups: dict = {}
    order = []
    for row in rows:
        key = tuple(row[i] for i in gidx)
        accs = groups.get(key)
        if accs is None:
            accs = [_make_acc(a) for a in plan.aggs]
            groups[key] = accs
            order.append(key)
        for acc, i in zip(accs, aidx):
            acc.add(row[i] if i is not None else None)
    return [key + tuple(acc.final() for acc in groups[key]) for key in order]


class _CountStar:
    __slots__ = ("n",)

    def __init__(self):
        self.n = 0

    def add(self, _):
        self.n += 1

    def final(self):
        return self.n


class _Count:
    __slots__ = ("n",)

    def __init__(self):
        self.n = 0

    def add(self, v):
        if v is not None:
            self.n += 1

    def final(self):
        return self.n


class _CountDistinct:
    __slots__ = ("seen",)

    def __init__(self):
        self.seen = set()

    def add(self, v):
        if v is not None:
            self.seen.add(v)

    def final(self):
        return len(self.seen)


class _Sum:
    __slots__ = ("total", "any")

    def __init__(self):
        self.total = 0
        self.any = False

    def add(self, v):
        if v is not None:
            self.total += v
            self.any = True

    def final(self):
        return self.total if self.any else None


class _Avg:
    __slots__ = ("total", "n")

    def __init__(self):
        self.total = 0.0
        self.n = 0

    def add(self, v):
        if v is not None:
            self.total += v
            self.n += 1

    def final(self):
        return self.total / self.n if self.n else None


class _Min:
    __slots__ = ("best",)

    def __init__(self):
        self.best = None

    def add(self, v):
        if v is not None and (self.best is None or v < self.best):
            self.best = v

    def final(self):
        return self.best


class _Max:
    __slots__ = ("best",)

    def __init__(self):
        self.best = None

    def add(self, v):
        if v is not None and (self.best is None or v > self.best):
            self.best = v

    def final(self):
        return self.best


def _make_acc(spec):
    if spec.func == "count":
        if spec.ref is None:
            return _CountStar()
        return _CountDistinct() if spec.distinct else _Count()
    if spec.func == "sum":
        return _Sum()
    if spec.func == "avg":
        return _Avg()
    if spec.func == "min":
        return _Min()
    if spec.func == "max":
        return _Max()
    raise ValueError(f"unknown aggregate {spec.func!r}")


# ------------------------------------------------------------------- sort


def sort_rows(rows, payload, positions: dict):
    """Stable multi-key sort; asc puts nulls last, desc puts them first."""
    out = list(rows)
    for key, direction in reversed(payload):
        i = positions[key]
        out.sort(key=lambda r: (r[i] is None, r[i]), reverse=(direction == "desc"))
    return out
