"""Trace analysis: activity labeling and the three report modes.

Traces are NDJSON files the engine appends to, one record per probe.
Reports work from the recorded sub-plan fingerprints and activity
labels alone, so no catalog or data directory is needed to analyze a
trace.

Modes: redundancy (total vs distinct sub-plans by size and by operator
kind), phases (activity x normalized-position matrix, each row scaled
to max 1), activity_counts (mean per-trace probe counts per activity,
with percentage deltas against a baseline trace).
"""

from __future__ import annotations

import csv
import io
import json

from .relational.database import VIRTUAL_TABLES

ACTIVITIES = (
    "metadata_exploration",
    "column_statistics",
    "partial_solution",
    "full_solution",
)

PHASE_BINS = 10
METADATA_LIMIT_MAX = 10
COLSTATS_MAX_COLUMNS = 2


# ------------------------------------------------------------ classifier


def _plan_tables(plan) -> set:
    from .planner import iter_nodes

    return {n.table for n in iter_nodes(plan) if n.kind == "TS"}


def _plan_has_agg(plan) -> bool:
    from .planner import iter_nodes

    return any(n.kind == "UA" for n in iter_nodes(plan))


def _small_limit_no_agg(plan) -> bool:
    from .planner import iter_nodes

    has_small_limit = any(
        n.kind == "OT" and n.op == "limit" and n.payload <= METADATA_LIMIT_MAX
        for n in iter_nodes(plan)
    )
    return has_small_limit and not _plan_has_agg(plan)


def _is_column_stats(plan) -> bool:
    from .planner import iter_nodes

    base = {t for t in _plan_tables(plan) if t not in VIRTUAL_TABLES}
    if len(base) != 1:
        return False
    # every column the query touches counts: group keys, aggregate
    # arguments, and filter predicates
    filter_refs = {
        r.text
        for n in iter_nodes(plan)
        if n.kind == "FI"
        for r in n.predicate.refs()
    }
    for n in iter_nodes(plan):
        if n.kind == "OT" and n.op == "distinct":
            if len({c.key for c in n.output} | filter_refs) <= COLSTATS_MAX_COLUMNS:
                return True
        if n.kind == "UA":
            refs = set(filter_refs)
            refs.update(r.text for r in n.group)
            for agg in n.aggs:
                if agg.ref is not None:
                    refs.add(agg.ref.text)
            if len(refs) <= COLSTATS_MAX_COLUMNS:
                return True
    return False


def _is_full_solution(plan, manifest) -> bool:
    if not manifest:
        return False
    from .planner import iter_nodes

    tables = _plan_tables(plan)
    if not set(manifest.get("tables", ())) <= tables:
        return False
    want_aggs = set(manifest.get("aggregates", ()))
    want_group = set(manifest.get("group", ()))
    have_aggs = set()
    have_group = set()
    for n in iter_nodes(plan):
        if n.kind == "UA":
            have_aggs.update(a.canonical() for a in n.aggs)
            have_group.update(r.text for r in n.group)
    return want_aggs <= have_aggs and want_group <= have_group


def classify_activity(probe, plans: dict, manifest=None) -> str:
    """Label one probe with the four-phase taxonomy.

    Precedence: metadata_exploration (catalog scans, or tiny LIMIT with
    no aggregate), then column_statistics (single-table DISTINCT or a
    narrow aggregate), then full_solution (covers the task manifest),
    else partial_solution.  `manifest` may be one task manifest or a
    list of them; any match counts.
    """
    plan_list = [plans[q.qid] for q in probe.queries if q.qid in plans]
    if not plan_list:
        return "partial_solution"
    for plan in plan_list:
        if _plan_tables(plan) & set(VIRTUAL_TABLES) or _small_limit_no_agg(plan):
            return "metadata_exploration"
    if any(_is_column_stats(plan) for plan in plan_list):
        return "column_statistics"
    manifests = manifest if isinstance(manifest, list) else [manifest]
    if any(_is_full_solution(plan, m) for plan in plan_list for m in manifests):
        return "full_solution"
    return "partial_solution"


# --------------------------------------------------------------- loading


def load_trace(path: str) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise ValueError(f"empty trace {path!r}")
    return records


# ------------------------------------------------------------ redundancy


def redundancy_report(records: list) -> dict:
    """Total vs distinct sub-plan counts, bucketed by size and kind."""
    by_size: dict = {}
    by_kind: dict = {}
    ge2_total = 0
    ge2_fps = set()
    for rec in records:
        for subplans in rec.get("subplans", {}).values():
            for fp, size, kind in subplans:
                s = by_size.setdefault(size, [0, set()])
                s[0] += 1
                s[1].add(fp)
                k = by_kind.setdefault(kind, [0, set()])
                k[0] += 1
                k[1].add(fp)
                if size >= 2:
                    ge2_total += 1
                    ge2_fps.add(fp)

    def bucket(total, fps):
        return {
            "total": total,
            "distinct": len(fps),
            "distinct_fraction": len(fps) / total if total else 0.0,
        }

    return {
        "mode": "redundancy",
        "by_size": {str(s): bucket(t, f) for s, (t, f) in sorted(by_size.items())},
        "by_kind": {k: bucket(t, f) for k, (t, f) in sorted(by_kind.items())},
        "sizes_ge2": bucket(ge2_total, ge2_fps),
    }


def _redundancy_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["section", "bucket", "total", "distinct", "distinct_fraction"])
    for name, section in (("by_size", report["by_size"]), ("by_kind", report["by_kind"])):
        for key, b in section.items():
            w.writerow([name, key, b["total"], b["distinct"], f"{b['distinct_fraction']:.6f}"])
    b = report["sizes_ge2"]
    w.writerow(["sizes_ge2", "", b["total"], b["distinct"], f"{b['distinct_fraction']:.6f}"])
    return buf.getvalue()


# ---------------------------------------------------------------- phases


def phases_report(records: list) -> dict:
    """Activity counts over normalized trace position, rows scaled to max 1."""
    by_agent: dict = {}
    for rec in records:
        if rec.get("kind") == "branch_op":
            continue
        by_agent.setdefault(rec["agent_id"], []).append(rec)
    matrix = {a: [0.0] * PHASE_BINS for a in ACTIVITIES}
    for agent_records in by_agent.values():
        agent_records.sort(key=lambda r: r["turn"])
        n = len(agent_records)
        for i, rec in enumerate(agent_records):
            b = min(PHASE_BINS - 1, (i * PHASE_BINS) // n)
            activity = rec.get("activity")
            if activity in matrix:
                matrix[activity][b] += 1.0
    for activity, row in matrix.items():
        peak = max(row)
        if peak > 0:
            matrix[activity] = [v / peak for v in row]
    return {"mode": "phases", "bins": PHASE_BINS, "matrix": matrix}


def _phases_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["activity"] + [f"bin{i}" for i in range(report["bins"])])
    for activity in ACTIVITIES:
        row = report["matrix"][activity]
        w.writerow([activity] + [f"{v:.4f}" for v in row])
    return buf.getvalue()


# -------------------------------------------------------- activity counts


def _mean_counts(records: list) -> dict:
    per_agent: dict = {}
    for rec in records:
        if rec.get("kind") == "branch_op":
            continue
        counts = per_agent.setdefault(rec["agent_id"], {a: 0 for a in ACTIVITIES})
        activity = rec.get("activity")
        if activity in counts:
            counts[activity] += 1
    n = len(per_agent)
    means = {a: 0.0 for a in ACTIVITIES}
    for counts in per_agent.values():
        for a in ACTIVITIES:
            means[a] += counts[a]
    if n:
        means = {a: v / n for a, v in means.items()}
    means["all_probes"] = sum(means[a] for a in ACTIVITIES)
    return means


def activity_counts_report(records: list, baseline: list = None) -> dict:
    """Mean per-trace probe counts per activity, with deltas vs baseline."""
    means = _mean_counts(records)
    out = {"mode": "activity_counts", "mean_counts": means}
    if baseline is not None:
        base = _mean_counts(baseline)
        deltas = {}
        for key, value in means.items():
            b = base.get(key, 0.0)
            deltas[key] = ((value - b) / b * 100.0) if b else None
        out["baseline_mean_counts"] = base
        out["delta_pct"] = deltas
    return out


def _activity_counts_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    keys = list(ACTIVITIES) + ["all_probes"]
    header = ["activity", "mean_count"]
    has_base = "baseline_mean_counts" in report
    if has_base:
        header += ["baseline_mean_count", "delta_pct"]
    w.writerow(header)
    for key in keys:
        row = [key, f"{report['mean_counts'][key]:.4f}"]
        if has_base:
            base = report["baseline_mean_counts"][key]
            delta = report["delta_pct"][key]
            row += [f"{base:.4f}", "" if delta is None else f"{delta:.2f}"]
        w.writerow(row)
    return buf.getvalue()


# ------------------------------------------------------------- dispatcher

REPORT_MODES = ("redundancy", "phases", "activity_counts")


def run_report(mode: str, trace_path: str, baseline_path: str = None) -> tuple:
    """(report dict, CSV text) for one mode."""
    records = load_trace(trace_path)
    if mode == "redundancy":
        report = redundancy_report(records)
        return report, _redundancy_csv(report)
    if mode == "phases":
        report = phases_report(records)
        return report, _phases_csv(report)
    if mode == "activity_counts":
        baseline = load_trace(baseline_path) if baseline_path else None
        report = activity_counts_report(records, baseline)
        return report, _activity_counts_csv(report)
    raise ValueError(f"unknown report mode {mode!r}")
