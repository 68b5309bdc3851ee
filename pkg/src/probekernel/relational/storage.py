"""Chunked copy-on-write row storage.

Rows live in fixed-capacity segments (default 1024 rows).  A branch's
view of a table is just a list of segment references, so forking a
branch copies reference lists and never row data.  A segment is copied
the first time a branch touches it while anyone else still holds it.

The registry counts live segments; tests use it to prove that forks
allocate nothing and that small writes copy at most a couple chunks.
"""

from __future__ import annotations

from typing import Optional

DEFAULT_CHUNK_CAPACITY = 1024


class SegmentRegistry:
    """Tracks how many segments exist right now."""

    def __init__(self):
        self.live = 0
        self.allocated_total = 0

    def on_alloc(self):
        self.live += 1
        self.allocated_total += 1

    def on_free(self):
        self.live -= 1


class Segment:
    """A run of up to ``capacity`` row tuples, shared across branches."""

    __slots__ = ("rows", "refcount", "registry")

    def __init__(self, registry: SegmentRegistry, rows: Optional[list] = None):
        self.rows = rows if rows is not None else []
        self.refcount = 1
        self.registry = registry
        registry.on_alloc()

    def incref(self):
        self.refcount += 1

    def decref(self):
        self.refcount -= 1
        if self.refcount == 0:
            self.registry.on_free()

    def copy(self) -> "Segment":
        return Segment(self.registry, list(self.rows))


class KeyIndex:
    """Primary-key index with frozen base layers.

    Forking freezes the current layer and gives both sides fresh
    overlays; lookups walk the chain.  Entries map key -> (chunk, slot)
    and stay valid across branches because updates rewrite rows in
    place at the same location.
    """

    __slots__ = ("local", "base")

    def __init__(self, base: Optional["KeyIndex"] = None):
        self.local: dict = {}
        self.base = base

    def get(self, key):
        node = self
        while node is not None:
            loc = node.local.get(key)
            if loc is not None:
                return loc
            node = node.base
        return None

    def put(self, key, loc):
        self.local[key] = loc


class TableState:
    """One branch's view of one table."""

    __slots__ = ("schema", "version", "chunks", "n_rows", "index", "capacity", "registry")

    def __init__(self, schema, registry: SegmentRegistry, capacity: int):
        self.schema = schema
        self.version = 0
        self.chunks: list[Segment] = []
        self.n_rows = 0
        self.index: Optional[KeyIndex] = KeyIndex() if schema.primary_key else None
        self.capacity = capacity
        self.registry = registry

    # ---- fork / release -------------------------------------------------

    def fork(self) -> "TableState":
        child = TableState.__new__(TableState)
        child.schema = self.schema
        child.version = self.version
        child.chunks = list(self.chunks)
        for seg in child.chunks:
            seg.incref()
        child.n_rows = self.n_rows
        child.capacity = self.capacity
        child.registry = self.registry
        if self.index is None:
            child.index = None
        elif self.index.local:
            # freeze the written layer; both sides get fresh overlays
            frozen = self.index
            self.index = KeyIndex(base=frozen)
            child.index = KeyIndex(base=frozen)
        else:
            # nothing written since the last freeze: share the base
            child.index = KeyIndex(base=self.index.base)
        return child

    def release(self):
        for seg in self.chunks:
            seg.decref()
        self.chunks = []
        self.index = None
        self.n_rows = 0

    # ---- mutation --------------------------------------------------------

    def _writable_chunk(self, idx: int) -> Segment:
        seg = self.chunks[idx]
        if seg.refcount > 1:
            seg.decref()
            seg = seg.copy()
            self.chunks[idx] = seg
        return seg

    def update_row(self, loc: tuple[int, int], row: tuple):
        chunk_idx, slot = loc
        seg = self._writable_chunk(chunk_idx)
        seg.rows[slot] = row

    def append_row(self, row: tuple) -> tuple[int, int]:
        if self.chunks and len(self.chunks[-1].rows) < self.capacity:
            idx = len(self.chunks) - 1
            seg = self._writable_chunk(idx)
        else:
            seg = Segment(self.registry)
            self.chunks.append(seg)
            idx = len(self.chunks) - 1
        seg.rows.append(row)
        self.n_rows += 1
        return (idx, len(seg.rows) - 1)

    def get_row(self, loc: tuple[int, int]) -> tuple:
        chunk_idx, slot = loc
        return self.chunks[chunk_idx].rows[slot]

    def scan(self):
        for seg in self.chunks:
            yield from seg.rows
