"""Branch lifecycle: fork, write, rollback, merge.

Merge semantics are row-level with first-committer-wins conflicts.
Every write batch is a logical event identified by (event_seq, writer
branch); rows copied by a merge keep that identity while landing on
the target's timeline at a fresh sequence.  For source S and target T
we reconstruct, per side, the set of events it has absorbed: walk the
branch lineage, taking each ancestor's log entries up to the fork
sequence where the path left it.

Per (table, key), with newest absorbed entries s* on S's side and t*
on T's:

  * t* missing, or t*'s event absorbed by S  ->  S is strictly ahead:
    apply S's current row to T;
  * s*'s event absorbed by T                 ->  T already has it (or
    built past it): skip the key;
  * neither absorbed the other               ->  concurrent writes:
    conflict.

One conflicting key aborts the whole merge and the error lists every
conflicting (table, key).  The branch that merged first therefore
wins; the later writer is told exactly which rows collided.

Writes to tables without a primary key are logged under synthetic
unique keys, so they merge as pure inserts and never conflict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BranchError, MergeConflict
from .relational.database import MAIN_BRANCH, BranchState, Database


@dataclass
class MergeReport:
    source: int
    target: int
    applied_rows: dict[str, int] = field(default_factory=dict)

    def to_wire(self) -> dict:
        return {
            "source": self.source,
            "target": self.target,
            "applied_rows": dict(sorted(self.applied_rows.items())),
        }


class BranchManager:
    def __init__(self, db: Database):
        self.db = db

    # ---- lifecycle -------------------------------------------------------

    def fork(self, parent_id: int = MAIN_BRANCH) -> int:
        return self.db.fork_branch(parent_id)

    def branch_write(self, branch_id: int, table: str, rows) -> int:
        """Upsert rows into a branch; returns its new table version."""
        return self.db.write(branch_id, table, rows, upsert=True)

    def rollback(self, branch_id: int) -> None:
        if branch_id == MAIN_BRANCH:
            raise BranchError("the mainline cannot be rolled back")
        br = self.db.active_branch(branch_id)
        self.db.release_branch(br.id, "rolled_back")

    # ---- merge -------------------------------------------------------------

    def merge(self, source_id: int, target_id: int) -> MergeReport:
        db = self.db
        with db.lock:
            if source_id == target_id:
                raise BranchError("cannot merge a branch into itself")
            if source_id == MAIN_BRANCH:
                raise BranchError("the mainline is not a merge source")
            source = db.active_branch(source_id)
            target = db.active_branch(target_id)

            s_absorbed, s_newest = self._absorbed(source)
            t_absorbed, t_newest = self._absorbed(target)

            to_apply: list[tuple] = []
            conflicts: list[tuple] = []
            for key, s_star in s_newest.items():
                s_event = (s_star[1], s_star[2])
                t_star = t_newest.get(key)
                if t_star is not None and s_event in t_absorbed:
                    continue  # target already has this event or built past it
                if t_star is None or (t_star[1], t_star[2]) in s_absorbed:
                    to_apply.append((key, s_star))
                else:
                    conflicts.append(key)

            if conflicts:
                conflicts.sort(key=lambda k: (k[0], repr(k[1])))
                raise MergeConflict(list(conflicts))

            # apply in original event order for deterministic row order
            to_apply.sort(key=lambda item: item[1][1])
            by_table: dict[str, list] = {}
            for (table, key), (_landed, event_seq, writer, loc) in to_apply:
                state = source.tables.get(table)
                if state is None or target.tables.get(table) is None:
                    raise BranchError(f"merge target has no table {table!r}")
                if isinstance(key, tuple) and key and key[0] == "@":
                    row = state.get_row(loc)
                else:
                    row_loc = state.index.get(key)
                    if row_loc is None:
                        raise BranchError(
                            f"merge source lost row {key!r} of {table!r}"
                        )
                    row = state.get_row(row_loc)
                by_table.setdefault(table, []).append((key, row, event_seq, writer))

            report = MergeReport(source_id, target_id)
            for table in sorted(by_table):
                report.applied_rows[table] = db.apply_merge_rows(
                    target_id, table, by_table[table]
                )
            db.release_branch(source_id, "merged")
            return report

    # ---- lineage helpers ---------------------------------------------------

    def _lineage(self, branch: BranchState) -> list[BranchState]:
        chain = [branch]
        while chain[-1].parent_id is not None:
            chain.append(self.db.branch(chain[-1].parent_id))
        return chain

    def _absorbed(self, branch: BranchState):
        """Causal past of a branch, from lineage logs and fork cutoffs.

        Returns (events, newest) where events is the set of absorbed
        (event_seq, writer) pairs and newest maps (table, key) to the
        latest absorbed entry (landed, event_seq, writer, loc).
        """
        events: set[tuple] = set()
        newest: dict[tuple, tuple] = {}
        cut = float("inf")
        for node in self._lineage(branch):
            for landed, event_seq, writer, table, key, loc in node.write_log:
                if landed > cut:
                    continue
                events.add((event_seq, writer))
                held = newest.get((table, key))
                if held is None or landed > held[0]:
                    newest[(table, key)] = (landed, event_seq, writer, loc)
            cut = min(cut, node.fork_seq)
        return events, newest
