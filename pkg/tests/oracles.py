"""Independent reference implementations used as oracles.

Everything here is re-derived from the documented contracts (README,
module docstrings) rather than from the engine's code, so tests can
compare engine output against a second opinion.  test_oracles.py
freezes these against hand-computed values first; the rest of the
suite then trusts them.
"""

from __future__ import annotations

import copy
import csv

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(text: str) -> int:
    """Textbook FNV-1a, 64-bit, over UTF-8 bytes."""
    h = FNV_OFFSET
    for b in text.encode("utf-8"):
        h ^= b
        h = (h * FNV_PRIME) & _MASK
    return h


# ------------------------------------------------------------ similarity


def trigram_set(text: str) -> set:
    """Lowercase, pad two spaces each side, 3-char windows, no all-space."""
    padded = "  " + text.lower() + "  "
    return {
        padded[i : i + 3]
        for i in range(len(padded) - 2)
        if padded[i : i + 3] != "   "
    }


def trigram_jaccard(a: str, b: str) -> float:
    ta, tb = trigram_set(a), trigram_set(b)
    if not ta or not tb:
        return 0.0
    inter = len(ta & tb)
    return inter / len(ta | tb) if inter else 0.0


# ---------------------------------------------------------- aggregation


def ref_aggregate(rows, func: str, idx):
    """One aggregate over a list of tuples; idx is the column position."""
    if func == "COUNT" and idx is None:
        return len(rows)
    vals = [r[idx] for r in rows if r[idx] is not None]
    if func == "COUNT":
        return len(vals)
    if func == "COUNT_DISTINCT":
        return len(set(vals))
    if func == "SUM":
        return sum(vals) if vals else None
    if func == "AVG":
        return sum(vals) / len(vals) if vals else None
    if func == "MIN":
        return min(vals) if vals else None
    if func == "MAX":
        return max(vals) if vals else None
    raise ValueError(func)


def ref_group_aggregate(rows, group_idx, func: str, agg_idx):
    """GROUP BY reference: dict group-key tuple -> aggregate value."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[i] for i in group_idx), []).append(r)
    return {k: ref_aggregate(v, func, agg_idx) for k, v in groups.items()}


def load_csv(path: str, types: list):
    """Typed CSV loader independent of the package loader.

    types: per-column type names ("int64" | "float64" | "text").
    """
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for raw in reader:
            row = []
            for v, t in zip(raw, types):
                if v == "":
                    row.append(None)
                elif t == "int64":
                    row.append(int(v))
                elif t == "float64":
                    row.append(float(v))
                else:
                    row.append(v)
            out.append(tuple(row))
    return header, out


# ------------------------------------------------------------- branching


class RefWorld:
    """Deep-copy reference for branch semantics.

    Every fork deep-copies the whole table map, so isolation holds by
    construction.  Merge is three-way against the source's fork point
    with first-committer-wins: a key counts as conflicting when both
    source and target wrote it (directly or by absorbing a merge)
    after the source forked.  Only child-into-parent merges are
    modeled, which is the shape the schedules generate.
    """

    def __init__(self, tables: dict):
        # tables: name -> {pk: row-tuple}
        self.seq = 0
        self.branches = {
            0: {
                "tables": copy.deepcopy(tables),
                "parent": None,
                "status": "active",
                "writes": {},  # (table, pk) -> seq of last write on this timeline
                "fork_seq": 0,
            }
        }
        self.next_id = 1

    def _tick(self) -> int:
        self.seq += 1
        return self.seq

    def active(self, bid: int) -> bool:
        return self.branches[bid]["status"] == "active"

    def fork(self, parent: int) -> int:
        src = self.branches[parent]
        assert src["status"] == "active"
        bid = self.next_id
        self.next_id += 1
        self.branches[bid] = {
            "tables": copy.deepcopy(src["tables"]),
            "parent": parent,
            "status": "active",
            "writes": {},
            "fork_seq": self._tick(),
        }
        return bid

    def write(self, bid: int, table: str, pk_idx: int, rows) -> None:
        br = self.branches[bid]
        assert br["status"] == "active"
        seq = self._tick()
        for row in rows:
            br["tables"][table][row[pk_idx]] = tuple(row)
            br["writes"][(table, row[pk_idx])] = seq

    def rollback(self, bid: int) -> None:
        assert bid != 0 and self.active(bid)
        self.branches[bid]["status"] = "rolled_back"

    def merge(self, src_id: int, tgt_id: int):
        """Returns sorted conflict list; empty means the merge applied."""
        src = self.branches[src_id]
        tgt = self.branches[tgt_id]
        assert src["status"] == "active" and tgt["status"] == "active"
        assert src["parent"] == tgt_id
        cutoff = src["fork_seq"]
        conflicts = sorted(
            (k for k in src["writes"] if tgt["writes"].get(k, -1) > cutoff),
            key=lambda k: (k[0], repr(k[1])),
        )
        if conflicts:
            return conflicts
        seq = self._tick()
        for (table, pk) in src["writes"]:
            tgt["tables"][table][pk] = src["tables"][table][pk]
            tgt["writes"][(table, pk)] = seq
        src["status"] = "merged"
        return []

    def scan(self, bid: int, table: str):
        """Rows sorted by primary key, as the engine's scan reports them."""
        br = self.branches[bid]
        return sorted(br["tables"][table].values(), key=lambda r: r[0])


# ------------------------------------------------------------- cost model

EQUALITY_SELECTIVITY = 0.1
RANGE_SELECTIVITY = 0.3
LIKE_SELECTIVITY = 0.25
