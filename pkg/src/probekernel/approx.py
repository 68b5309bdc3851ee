"""Sampled and incremental plan execution.

Sampled runs draw a Bernoulli sample at every scan (geometric skips, so
cost is proportional to the rows kept, not the rows stored) and rescale
additive aggregates: COUNT and SUM are multiplied by (1/fraction) per
sampled scan, AVG is reported unscaled, MIN/MAX come back as one-sided
bounds.  Standard errors use the sample variance of per-row
contributions and are reported for ungrouped single-scan aggregates;
everything is deterministic for a fixed (plan, fraction, seed).

Incremental runs stream scan->filter->project pipelines in row batches
and test a caller-supplied stop condition at every checkpoint, which is
how briefs get to say "this is good enough, stop".
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import ProbeKernelError
from .planner.nodes import (
    AggregateNode,
    FilterNode,
    OtherNode,
    PlanNode,
    ProjectNode,
    ScanNode,
    fnv1a_64,
    iter_nodes,
)
from .relational.executor import compile_predicate, execute_plan, sort_rows
from .relational.types import FLOAT64, INT64

DEFAULT_CHECKPOINT_ROWS = 1024


# ---------------------------------------------------------------- sampling


def _skip_sample_scan(catalog, table: str, fraction: float, seed: int, counter):
    chunks, n_rows, cap = catalog.chunk_view(table)
    rng = random.Random(fnv1a_64(f"{seed}:{table}") & 0x7FFFFFFFFFFFFFFF)
    log1f = math.log(1.0 - fraction)
    i = -1
    while True:
        u = rng.random()
        i += int(math.log(1.0 - u) / log1f) + 1
        if i >= n_rows:
            return
        counter[0] += 1
        yield chunks[i // cap][i % cap]


@dataclass
class AggEstimate:
    column: str  # display name in the output
    rule: str  # "scaled" | "unscaled" | "bound"
    stderr: Optional[float] = None
    bound: Optional[str] = None  # "lower" | "upper" for MIN/MAX

    def to_wire(self) -> dict:
        doc = {"column": self.column, "rule": self.rule}
        if self.stderr is not None:
            doc["stderr"] = self.stderr
        if self.bound is not None:
            doc["bound"] = self.bound
        return doc


@dataclass
class SampledExecution:
    rows: list
    exact: bool
    sample_fraction: float
    n_sampled: int
    scale_power: int  # number of sampled scans; scale = (1/f) ** power
    agg_estimates: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def execute_sampled(plan: PlanNode, catalog, fraction: float, seed: int) -> SampledExecution:
    """Run `plan` over Bernoulli samples of its scans.

    fraction 1.0 short-circuits to the exact path (bit-identical rows,
    stderr 0).  COUNT(DISTINCT ...) anywhere forces the exact path with
    a warning, since thinning rows loses distinctness information.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"sample fraction {fraction} outside (0, 1]")

    has_count_distinct = any(
        isinstance(n, AggregateNode) and any(a.distinct for a in n.aggs)
        for n in iter_nodes(plan)
    )
    if fraction >= 1.0 or has_count_distinct:
        rows = execute_plan(plan, catalog)
        warnings = []
        if has_count_distinct and fraction < 1.0:
            warnings.append(
                "count-distinct cannot be estimated from a row sample; ran exact"
            )
        estimates = []
        above, ua = _split_agg_chain(plan)
        if ua is not None:
            for c in plan.output:
                if c.key in {a.canonical() for a in ua.aggs}:
                    estimates.append(AggEstimate(c.name, "unscaled", stderr=0.0))
        return SampledExecution(
            rows=rows,
            exact=True,
            sample_fraction=1.0 if fraction >= 1.0 else fraction,
            n_sampled=0,
            scale_power=0,
            agg_estimates=estimates,
            warnings=warnings,
        )

    n_scans = sum(1 for n in iter_nodes(plan) if isinstance(n, ScanNode))
    counter = [0]

    def scan_fn(table):
        return _skip_sample_scan(catalog, table, fraction, seed, counter)

    above, ua = _split_agg_chain(plan)
    if ua is None:
        rows = execute_plan(plan, catalog, scan_fn=scan_fn)
        return SampledExecution(
            rows=rows,
            exact=False,
            sample_fraction=fraction,
            n_sampled=counter[0],
            scale_power=n_scans,
        )

    child_rows = execute_plan(ua.children[0], catalog, scan_fn=scan_fn)
    scale = (1.0 / fraction) ** n_scans
    out_rows, est_by_key = _sampled_aggregate(
        ua, child_rows, fraction, scale, single_scan=(n_scans == 1)
    )
    for node in reversed(above):
        out_rows = _apply_above(node, out_rows)
    estimates = [est_by_key[c.key].renamed(c.name) for c in plan.output if c.key in est_by_key]
    return SampledExecution(
        rows=out_rows,
        exact=False,
        sample_fraction=fraction,
        n_sampled=counter[0],
        scale_power=n_scans,
        agg_estimates=estimates,
    )


def _split_agg_chain(plan):
    """Peel single-child wrappers off the root until the aggregate, if any."""
    above = []
    node = plan
    while isinstance(node, (ProjectNode, OtherNode)):
        above.append(node)
        node = node.children[0]
    if isinstance(node, AggregateNode):
        return above, node
    return [], None


def _positions(node: PlanNode) -> dict:
    return {c.key: i for i, c in enumerate(node.output)}


def _apply_above(node, rows):
    child = node.children[0]
    pos = _positions(child)
    if isinstance(node, ProjectNode):
        idx = [pos[c.key] for c in node.output]
        return [tuple(r[i] for i in idx) for r in rows]
    if node.op == "limit":
        return rows[: node.payload]
    if node.op == "distinct":
        seen = set()
        out = []
        for r in rows:
            if r not in seen:
                seen.add(r)
                out.append(r)
        return out
    return sort_rows(rows, node.payload, pos)


class _SampledAcc:
    """One aggregate over one group, tracking what stderr needs."""

    __slots__ = ("spec", "n", "total", "sq", "mean", "m2", "lo", "hi")

    def __init__(self, spec):
        self.spec = spec
        self.n = 0
        self.total = 0
        self.sq = 0.0
        self.mean = 0.0
        self.m2 = 0.0
        self.lo = None
        self.hi = None

    def add(self, v):
        if v is None:
            return
        self.n += 1
        self.total += v
        self.sq += float(v) * float(v)
        d = v - self.mean
        self.mean += d / self.n
        self.m2 += d * (v - self.mean)
        if self.lo is None or v < self.lo:
            self.lo = v
        if self.hi is None or v > self.hi:
            self.hi = v

    def value(self, scale):
        f = self.spec.func
        if f == "count":
            return round(self.n * scale)
        if f == "sum":
            return self.total * scale if self.n else None
        if f == "avg":
            return self.mean if self.n else None
        if f == "min":
            return self.lo
        return self.hi

    def stderr(self, fraction):
        f = self.spec.func
        if f == "count":
            return math.sqrt(self.n * (1.0 - fraction)) / fraction
        if f == "sum":
            return math.sqrt((1.0 - fraction) * self.sq) / fraction
        if f == "avg":
            if self.n < 2:
                return None
            s = math.sqrt(self.m2 / (self.n - 1))
            return math.sqrt((1.0 - fraction) / self.n) * s
        return None


@dataclass
class _Est(AggEstimate):
    def renamed(self, name):
        return AggEstimate(name, self.rule, self.stderr, self.bound)


def _sampled_aggregate(ua: AggregateNode, rows, fraction, scale, single_scan):
    child = ua.children[0]
    pos = _positions(child)
    gidx = [pos[r.text] for r in ua.group]
    aidx = [pos[a.ref.text] if a.ref is not None else None for a in ua.aggs]

    def make_accs():
        return [_SampledAcc(a) for a in ua.aggs]

    if not gidx:
        accs = make_accs()
        for row in rows:
            for acc, i in zip(accs, aidx):
                acc.add(row[i] if i is not None else 1)
        out = [tuple(acc.value(scale) for acc in accs)]
        grouped = False
        acc_for_est = accs
    else:
        groups: dict = {}
        order = []
        for row in rows:
            key = tuple(row[i] for i in gidx)
            accs = groups.get(key)
            if accs is None:
                accs = make_accs()
                groups[key] = accs
                order.append(key)
            for acc, i in zip(accs, aidx):
                acc.add(row[i] if i is not None else 1)
        out = [key + tuple(acc.value(scale) for acc in groups[key]) for key in order]
        grouped = True
        acc_for_est = None

    est_by_key = {}
    for j, spec in enumerate(ua.aggs):
        key = spec.canonical()
        if spec.func in ("min", "max"):
            bound = "upper" if spec.func == "min" else "lower"
            est_by_key[key] = _Est(key, "bound", None, bound)
        elif spec.func == "avg":
            se = acc_for_est[j].stderr(fraction) if not grouped and single_scan else None
            est_by_key[key] = _Est(key, "unscaled", se, None)
        else:
            se = acc_for_est[j].stderr(fraction) if not grouped and single_scan else None
            est_by_key[key] = _Est(key, "scaled", se, None)
    return out, est_by_key


# -------------------------------------------------------------- incremental


@dataclass
class PartialResult:
    """Accumulated prefix of a streamed result with running statistics."""

    columns: tuple  # (name, ctype) pairs
    rows: list = field(default_factory=list)
    checkpoints: int = 0

    def __post_init__(self):
        self._numeric = [
            i for i, (_, t) in enumerate(self.columns) if t in (INT64, FLOAT64)
        ]
        self._moments = {i: [0, 0.0, 0.0] for i in self._numeric}  # n, mean, M2
        self._mins: dict = {}
        self._maxs: dict = {}

    @property
    def rowcount(self) -> int:
        return len(self.rows)

    def add(self, row):
        self.rows.append(row)
        for i in self._numeric:
            v = row[i]
            if v is None:
                continue
            m = self._moments[i]
            m[0] += 1
            d = v - m[1]
            m[1] += d / m[0]
            m[2] += d * (v - m[1])
        for i, v in enumerate(row):
            if v is None:
                continue
            if i not in self._mins or v < self._mins[i]:
                self._mins[i] = v
            if i not in self._maxs or v > self._maxs[i]:
                self._maxs[i] = v

    def column_index(self, name: str) -> Optional[int]:
        for i, (n, _) in enumerate(self.columns):
            if n == name:
                return i
        return None

    def moments(self, col_index: int):
        """(count, mean, M2) for a numeric column; None if not numeric."""
        return self._moments.get(col_index)

    def min_of(self, col_index: int):
        return self._mins.get(col_index)

    def max_of(self, col_index: int):
        return self._maxs.get(col_index)

    def value_set(self) -> set:
        out = set()
        for row in self.rows:
            for v in row:
                if v is not None:
                    out.add(v)
        return out


@dataclass
class IncrementalOutcome:
    rows: list
    partial: Optional[PartialResult]
    terminated_early: bool
    warnings: list = field(default_factory=list)


def is_streamable(plan: PlanNode) -> bool:
    """True for scan-driven pipelines: chains of filter/project/limit/
    distinct over a single scan.  Joins, aggregates and sorts need their
    whole input, so they only ever finish or not."""
    node = plan
    while True:
        if isinstance(node, ScanNode):
            return True
        if isinstance(node, FilterNode) or isinstance(node, ProjectNode):
            node = node.children[0]
            continue
        if isinstance(node, OtherNode) and node.op in ("limit", "distinct"):
            node = node.children[0]
            continue
        return False


def _pipeline(plan: PlanNode, catalog):
    if isinstance(plan, ScanNode):
        yield from catalog.scan_rows(plan.table)
        return
    child = _pipeline(plan.children[0], catalog)
    if isinstance(plan, FilterNode):
        pred = compile_predicate(plan.predicate, _positions(plan.children[0]))
        for r in child:
            if pred(r):
                yield r
        return
    if isinstance(plan, ProjectNode):
        pos = _positions(plan.children[0])
        idx = [pos[c.key] for c in plan.output]
        for r in child:
            yield tuple(r[i] for i in idx)
        return
    if plan.op == "limit":
        n = plan.payload
        for i, r in enumerate(child):
            if i >= n:
                return
            yield r
        return
    seen = set()  # distinct
    for r in child:
        if r not in seen:
            seen.add(r)
            yield r


def execute_incremental(
    plan: PlanNode,
    catalog,
    stop_when: Optional[Callable[[PartialResult], bool]],
    checkpoint_rows: int = DEFAULT_CHECKPOINT_ROWS,
) -> IncrementalOutcome:
    """Stream `plan`, testing `stop_when` every `checkpoint_rows` output rows.

    A satisfied stop condition returns the accumulated prefix as an
    inexact partial.  A stop_when that raises gets one warning and is
    disabled for the rest of the run.  Non-streamable plans and absent
    conditions run to completion on the exact path.
    """
    if checkpoint_rows < 1:
        raise ValueError("checkpoint_rows must be >= 1")
    columns = tuple((c.name, c.ctype) for c in plan.output)
    if stop_when is None or not is_streamable(plan):
        rows = execute_plan(plan, catalog)
        return IncrementalOutcome(rows, None, False)

    partial = PartialResult(columns)
    warnings: list = []
    armed = True
    it = _pipeline(plan, catalog)
    since = 0
    while True:
        try:
            row = next(it)
        except StopIteration:
            return IncrementalOutcome(partial.rows, partial, False, warnings)
        partial.add(row)
        since += 1
        if since < checkpoint_rows or not armed:
            continue
        since = 0
        partial.checkpoints += 1
        try:
            satisfied = stop_when(partial)
        except ProbeKernelError as exc:
            warnings.append(f"termination check failed ({exc}); running to completion")
            armed = False
            continue
        if not satisfied:
            continue
        # stopping at the very last row is just finishing
        try:
            lookahead = next(it)
        except StopIteration:
            return IncrementalOutcome(partial.rows, partial, False, warnings)
        del lookahead
        return IncrementalOutcome(partial.rows, partial, True, warnings)
