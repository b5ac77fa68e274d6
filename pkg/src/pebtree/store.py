"""Disk-page-simulated B+-tree with an LRU buffer and I/O accounting.

Pages are plain in-memory objects sized by a byte budget: a 4 KB page
holds 64 leaf records (64 bytes each: key, uid, four motion fields,
update time, policy handle) or 256 child slots (16 bytes per fence/child
pair).  Every page access goes through the buffer; the benchmark's
charged I/O is the number of buffer misses.  Benchmarks are meant to run
single-threaded so the counters stay reproducible; parallel experiments
should use independent instances.

:class:`MovingObjectIndex` wraps the tree with key computation for moving
objects and is instantiated once with policy-embedded keys and once with
baseline keys.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from collections import OrderedDict
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterator, NamedTuple

from .keys import KeyLayout, SequenceValueMap
from .motion import MovingObject, TimePartitionConfig, index_partition, label_timestamp, position_at
from .zcurve import GridConfig, cell_of, z_encode

PAGE_SIZE = 4096
LEAF_RECORD_BYTES = 64
INTERNAL_RECORD_BYTES = 16
BUFFER_PAGES = 50


class LeafEntry(NamedTuple):
    key: int
    uid: int
    x: float
    y: float
    vx: float
    vy: float
    t: float
    policy_ref: int


class TreeStats(NamedTuple):
    height: int
    leaf_count: int
    entry_count: int
    page_count: int


class ScanStats(NamedTuple):
    matched: int
    leaves_touched: int


class IoCounters(NamedTuple):
    reads: int
    misses: int
    leaf_reads: int
    leaf_misses: int
    writes: int


class DirectionalSpeeds(NamedTuple):
    """Dataset-wide maximum speed toward each axis direction."""

    pos_x: float
    neg_x: float
    pos_y: float
    neg_y: float

    def absorb(self, vx: float, vy: float) -> "DirectionalSpeeds":
        return DirectionalSpeeds(
            max(self.pos_x, vx),
            max(self.neg_x, -vx),
            max(self.pos_y, vy),
            max(self.neg_y, -vy),
        )


ZERO_SPEEDS = DirectionalSpeeds(0.0, 0.0, 0.0, 0.0)


class PageBuffer:
    """Strict LRU buffer of page ids with access counters.

    A touch of a non-resident page counts as a miss (one charged I/O) and
    evicts the least recently used page when full.
    """

    def __init__(self, capacity: int = BUFFER_PAGES) -> None:
        self.capacity = capacity
        self._lru: OrderedDict[int, None] = OrderedDict()
        self.reads = 0
        self.misses = 0
        self.leaf_reads = 0
        self.leaf_misses = 0
        self.writes = 0

    def touch(self, page_id: int, leaf: bool) -> bool:
        """Access a page; returns True when the access missed the buffer."""
        self.reads += 1
        if leaf:
            self.leaf_reads += 1
        if page_id in self._lru:
            self._lru.move_to_end(page_id)
            return False
        self.misses += 1
        if leaf:
            self.leaf_misses += 1
        self._lru[page_id] = None
        while len(self._lru) > self.capacity:
            self._lru.popitem(last=False)
        return True

    def note_write(self, page_id: int) -> None:
        self.writes += 1

    def drop(self, page_id: int) -> None:
        self._lru.pop(page_id, None)

    def counters(self) -> IoCounters:
        return IoCounters(self.reads, self.misses, self.leaf_reads, self.leaf_misses, self.writes)

    def reset_counters(self) -> None:
        self.reads = self.misses = self.leaf_reads = self.leaf_misses = self.writes = 0

    def clear(self) -> None:
        """Empty the buffer (cold cache) and zero the counters."""
        self._lru.clear()
        self.reset_counters()


class Node:
    __slots__ = ("page_id", "leaf", "keys", "entries", "children", "next_leaf")

    def __init__(self, page_id: int, leaf: bool) -> None:
        self.page_id = page_id
        self.leaf = leaf
        self.keys: list = []  # leaf: (key, uid); internal: separator (key, uid)
        self.entries: list[LeafEntry] = []  # leaf only, parallel to keys
        self.children: list[int] = []  # internal only
        self.next_leaf: int | None = None


_MIN_KEY = (-1, -1)


class BPlusTree:
    """B+-tree over composite (key, uid) with simulated paging.

    Leaves form a singly linked chain in key order; occupancy stays
    between 50% and 100% everywhere but the root.
    """

    def __init__(
        self,
        page_size: int = PAGE_SIZE,
        buffer_pages: int = BUFFER_PAGES,
        leaf_record: int = LEAF_RECORD_BYTES,
        internal_record: int = INTERNAL_RECORD_BYTES,
    ) -> None:
        self.page_size = page_size
        self.leaf_cap = page_size // leaf_record
        self.internal_cap = page_size // internal_record
        if self.leaf_cap < 4 or self.internal_cap < 4:
            raise ValueError("page size too small for the record formats")
        self.buffer = PageBuffer(buffer_pages)
        self.pages: dict[int, Node] = {}
        self._next_page = 0
        root = self._alloc(leaf=True)
        self.root_id = root.page_id
        self.height = 1
        self.leaf_count = 1
        self.entry_count = 0

    # -- page plumbing ------------------------------------------------------

    def _alloc(self, leaf: bool) -> Node:
        node = Node(self._next_page, leaf)
        self._next_page += 1
        self.pages[node.page_id] = node
        self.buffer.touch(node.page_id, leaf)
        self.buffer.note_write(node.page_id)
        return node

    def _free(self, node: Node) -> None:
        del self.pages[node.page_id]
        self.buffer.drop(node.page_id)

    def _node(self, page_id: int) -> Node:
        node = self.pages[page_id]
        self.buffer.touch(page_id, node.leaf)
        return node

    def touch_page(self, page_id: int) -> None:
        """Re-charge an access to a page already located by an earlier scan."""
        node = self.pages.get(page_id)
        if node is not None:
            self.buffer.touch(page_id, node.leaf)

    # -- descent ------------------------------------------------------------

    def _descend(self, composite: tuple[int, int]) -> tuple[list[tuple[Node, int]], Node]:
        path: list[tuple[Node, int]] = []
        node = self._node(self.root_id)
        while not node.leaf:
            i = bisect_right(node.keys, composite)
            path.append((node, i))
            node = self._node(node.children[i])
        return path, node

    def descend(self, key: int, uid: int = -1) -> tuple[tuple[int, ...], Node, int]:
        """Locate the leaf for (key, uid); returns (path page ids, leaf, slot)."""
        path, leaf = self._descend((key, uid))
        return tuple(n.page_id for n, _ in path), leaf, bisect_left(leaf.keys, (key, uid))

    # -- mutation -----------------------------------------------------------

    def insert(self, entry: LeafEntry) -> None:
        """Insert one leaf entry; duplicates of (key, uid) are rejected."""
        composite = (entry.key, entry.uid)
        path, leaf = self._descend(composite)
        i = bisect_left(leaf.keys, composite)
        if i < len(leaf.keys) and leaf.keys[i] == composite:
            raise ValueError(f"duplicate entry {composite}")
        leaf.keys.insert(i, composite)
        leaf.entries.insert(i, entry)
        self.buffer.note_write(leaf.page_id)
        self.entry_count += 1
        if len(leaf.keys) > self.leaf_cap:
            self._split_leaf(leaf, path)

    def _split_leaf(self, leaf: Node, path: list[tuple[Node, int]]) -> None:
        mid = len(leaf.keys) // 2
        right = self._alloc(leaf=True)
        right.keys = leaf.keys[mid:]
        right.entries = leaf.entries[mid:]
        del leaf.keys[mid:]
        del leaf.entries[mid:]
        right.next_leaf = leaf.next_leaf
        leaf.next_leaf = right.page_id
        self.buffer.note_write(leaf.page_id)
        self.leaf_count += 1
        self._insert_in_parent(path, right.keys[0], right.page_id)

    def _insert_in_parent(self, path: list[tuple[Node, int]], sep: tuple[int, int], right_pid: int) -> None:
        if not path:
            old_root = self.root_id
            new_root = self._alloc(leaf=False)
            new_root.keys = [sep]
            new_root.children = [old_root, right_pid]
            self.root_id = new_root.page_id
            self.height += 1
            return
        parent, idx = path.pop()
        parent.keys.insert(idx, sep)
        parent.children.insert(idx + 1, right_pid)
        self.buffer.note_write(parent.page_id)
        if len(parent.children) > self.internal_cap:
            mid = len(parent.keys) // 2
            up_sep = parent.keys[mid]
            right = self._alloc(leaf=False)
            right.keys = parent.keys[mid + 1 :]
            right.children = parent.children[mid + 1 :]
            del parent.keys[mid:]
            del parent.children[mid + 1 :]
            self._insert_in_parent(path, up_sep, right.page_id)

    def delete(self, key: int, uid: int) -> None:
        """Remove the entry with this (key, uid); missing entries are reported."""
        composite = (key, uid)
        path, leaf = self._descend(composite)
        i = bisect_left(leaf.keys, composite)
        if i >= len(leaf.keys) or leaf.keys[i] != composite:
            raise KeyError(f"no entry {composite}")
        del leaf.keys[i]
        del leaf.entries[i]
        self.buffer.note_write(leaf.page_id)
        self.entry_count -= 1
        self._rebalance(leaf, path)

    def _rebalance(self, node: Node, path: list[tuple[Node, int]]) -> None:
        while True:
            if node.page_id == self.root_id:
                if not node.leaf and len(node.children) == 1:
                    self.root_id = node.children[0]
                    self._free(node)
                    self.height -= 1
                return
            need = (self.leaf_cap // 2) if node.leaf else (self.internal_cap // 2)
            size = len(node.keys) if node.leaf else len(node.children)
            if size >= need:
                return
            parent, idx = path[-1]
            left = self._node(parent.children[idx - 1]) if idx > 0 else None
            right = self._node(parent.children[idx + 1]) if idx + 1 < len(parent.children) else None
            if node.leaf:
                if left is not None and len(left.keys) > self.leaf_cap // 2:
                    node.keys.insert(0, left.keys.pop())
                    node.entries.insert(0, left.entries.pop())
                    parent.keys[idx - 1] = node.keys[0]
                    self._note_writes(left, node, parent)
                    return
                if right is not None and len(right.keys) > self.leaf_cap // 2:
                    node.keys.append(right.keys.pop(0))
                    node.entries.append(right.entries.pop(0))
                    parent.keys[idx] = right.keys[0]
                    self._note_writes(node, right, parent)
                    return
                if left is not None:
                    left.keys.extend(node.keys)
                    left.entries.extend(node.entries)
                    left.next_leaf = node.next_leaf
                    del parent.keys[idx - 1]
                    del parent.children[idx]
                    self._free(node)
                    self._note_writes(left, parent)
                else:
                    assert right is not None
                    node.keys.extend(right.keys)
                    node.entries.extend(right.entries)
                    node.next_leaf = right.next_leaf
                    del parent.keys[idx]
                    del parent.children[idx + 1]
                    self._free(right)
                    self._note_writes(node, parent)
                self.leaf_count -= 1
            else:
                if left is not None and len(left.children) > self.internal_cap // 2:
                    node.keys.insert(0, parent.keys[idx - 1])
                    parent.keys[idx - 1] = left.keys.pop()
                    node.children.insert(0, left.children.pop())
                    self._note_writes(left, node, parent)
                    return
                if right is not None and len(right.children) > self.internal_cap // 2:
                    node.keys.append(parent.keys[idx])
                    parent.keys[idx] = right.keys.pop(0)
                    node.children.append(right.children.pop(0))
                    self._note_writes(node, right, parent)
                    return
                if left is not None:
                    left.keys.append(parent.keys[idx - 1])
                    left.keys.extend(node.keys)
                    left.children.extend(node.children)
                    del parent.keys[idx - 1]
                    del parent.children[idx]
                    self._free(node)
                    self._note_writes(left, parent)
                else:
                    assert right is not None
                    node.keys.append(parent.keys[idx])
                    node.keys.extend(right.keys)
                    node.children.extend(right.children)
                    del parent.keys[idx]
                    del parent.children[idx + 1]
                    self._free(right)
                    self._note_writes(node, parent)
            path.pop()
            node = parent

    def _note_writes(self, *nodes: Node) -> None:
        for n in nodes:
            self.buffer.note_write(n.page_id)

    # -- scans ---------------------------------------------------------------

    def range_scan(self, lo: int, hi: int, visit: Callable[[LeafEntry], None]) -> ScanStats:
        """Visit entries with lo <= key <= hi in key order.

        Descends once to the leaf that would contain ``lo`` and then
        follows the sibling chain; every touched page is charged through
        the buffer.
        """
        if lo > hi:
            raise ValueError("empty key range")
        _, leaf = self._descend((lo, -1))
        leaves = 1
        matched = 0
        i = bisect_left(leaf.keys, (lo, -1))
        while True:
            while i < len(leaf.keys):
                if leaf.keys[i][0] > hi:
                    return ScanStats(matched, leaves)
                visit(leaf.entries[i])
                matched += 1
                i += 1
            if leaf.next_leaf is None:
                return ScanStats(matched, leaves)
            leaf = self._node(leaf.next_leaf)
            leaves += 1
            i = 0

    def scan_intervals(self, intervals: list[tuple[int, int]], visit: Callable[[LeafEntry], None]) -> ScanStats:
        """Scan a sorted list of disjoint key intervals with a leaf cursor.

        Re-descends only when the next interval starts beyond the current
        leaf, mirroring one locate-then-walk pass per search range.
        """
        leaf: Node | None = None
        matched = 0
        leaves = 0
        for lo, hi in intervals:
            lo_c = (lo, -1)
            if leaf is None or not leaf.keys or leaf.keys[-1] < lo_c:
                _, leaf = self._descend(lo_c)
                leaves += 1
            i = bisect_left(leaf.keys, lo_c)
            while True:
                while i < len(leaf.keys):
                    if leaf.keys[i][0] > hi:
                        break
                    visit(leaf.entries[i])
                    matched += 1
                    i += 1
                else:
                    if leaf.next_leaf is not None:
                        leaf = self._node(leaf.next_leaf)
                        leaves += 1
                        i = 0
                        continue
                break
        return ScanStats(matched, leaves)

    def entries_in(self, lo: int, hi: int) -> list[LeafEntry]:
        out: list[LeafEntry] = []
        self.range_scan(lo, hi, out.append)
        return out

    def iter_entries(self) -> Iterator[LeafEntry]:
        """In-order traversal over the leaf chain (charged like any scan)."""
        leaf = self._leftmost_leaf()
        while leaf is not None:
            yield from leaf.entries
            leaf = self._node(leaf.next_leaf) if leaf.next_leaf is not None else None

    def _leftmost_leaf(self) -> Node:
        node = self._node(self.root_id)
        while not node.leaf:
            node = self._node(node.children[0])
        return node

    def stats(self) -> TreeStats:
        return TreeStats(self.height, self.leaf_count, self.entry_count, len(self.pages))

    # -- integrity audit (test support) --------------------------------------

    def audit(self) -> None:
        """Check structural invariants; raises AssertionError on violation."""
        root = self.pages[self.root_id]
        leaf_pages: list[int] = []
        count = self._audit_node(root, None, None, 1, leaf_pages)
        assert count == self.entry_count, "entry count drift"
        assert len(leaf_pages) == self.leaf_count, "leaf count drift"
        # leaf chain matches in-order leaf sequence and is globally sorted
        chain = []
        node = root
        while not node.leaf:
            node = self.pages[node.children[0]]
        flat = []
        while True:
            chain.append(node.page_id)
            flat.extend(node.keys)
            if node.next_leaf is None:
                break
            node = self.pages[node.next_leaf]
        assert chain == leaf_pages, "leaf chain disagrees with tree order"
        assert flat == sorted(flat), "leaf chain not sorted"
        assert len(set(flat)) == len(flat), "duplicate composite keys"

    def _audit_node(self, node: Node, lo, hi, depth: int, leaf_pages: list[int]) -> int:
        is_root = node.page_id == self.root_id
        if node.leaf:
            assert depth == self.height, "uneven leaf depth"
            if not is_root:
                assert len(node.keys) >= self.leaf_cap // 2, "leaf underflow"
            assert len(node.keys) <= self.leaf_cap, "leaf overflow"
            for k in node.keys:
                assert (lo is None or k >= lo) and (hi is None or k < hi), "key outside fence range"
            leaf_pages.append(node.page_id)
            return len(node.keys)
        if not is_root:
            assert len(node.children) >= self.internal_cap // 2, "internal underflow"
        assert len(node.children) <= self.internal_cap, "internal overflow"
        assert len(node.children) == len(node.keys) + 1, "fence/child mismatch"
        assert node.keys == sorted(node.keys), "unsorted fences"
        total = 0
        bounds = [lo] + list(node.keys) + [hi]
        for i, child_pid in enumerate(node.children):
            total += self._audit_node(self.pages[child_pid], bounds[i], bounds[i + 1], depth + 1, leaf_pages)
        return total

    # -- snapshot -------------------------------------------------------------

    def to_snapshot(self) -> dict:
        pages = []
        for pid in sorted(self.pages):
            node = self.pages[pid]
            pages.append(
                {
                    "id": pid,
                    "leaf": node.leaf,
                    "keys": node.keys,
                    "entries": [list(e) for e in node.entries] if node.leaf else [],
                    "children": node.children,
                    "next_leaf": node.next_leaf,
                }
            )
        return {
            "page_size": self.page_size,
            "buffer_pages": self.buffer.capacity,
            "leaf_cap": self.leaf_cap,
            "internal_cap": self.internal_cap,
            "root": self.root_id,
            "next_page": self._next_page,
            "height": self.height,
            "leaf_count": self.leaf_count,
            "entry_count": self.entry_count,
            "pages": pages,
        }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "BPlusTree":
        tree = cls(page_size=snap["page_size"], buffer_pages=snap["buffer_pages"])
        tree.pages.clear()
        for p in snap["pages"]:
            node = Node(p["id"], p["leaf"])
            node.keys = [tuple(k) for k in p["keys"]]
            node.entries = [LeafEntry(*e) for e in p["entries"]]
            node.children = list(p["children"])
            node.next_leaf = p["next_leaf"]
            tree.pages[node.page_id] = node
        tree.root_id = snap["root"]
        tree._next_page = snap["next_page"]
        tree.height = snap["height"]
        tree.leaf_count = snap["leaf_count"]
        tree.entry_count = snap["entry_count"]
        tree.buffer.clear()
        return tree


class MovingObjectIndex:
    """Moving-object index over the B+-tree, keyed per the chosen layout.

    One physical tree stores all time partitions, distinguished by the
    partition prefix of the key.  The index keeps per-partition entry
    counts (so queries can skip drained partitions), the label timestamp
    each live partition was filled under, and dataset-wide directional
    speed maxima used for query-window enlargement.
    """

    def __init__(
        self,
        time_cfg: TimePartitionConfig,
        grid: GridConfig,
        layout: KeyLayout,
        sv_map: SequenceValueMap | None = None,
        buffer_pages: int = BUFFER_PAGES,
        page_size: int = PAGE_SIZE,
    ) -> None:
        self.time_cfg = time_cfg
        self.grid = grid
        self.layout = layout
        self.sv_map = sv_map
        self.kind = "peb" if sv_map is not None else "bx"
        self.tree = BPlusTree(page_size=page_size, buffer_pages=buffer_pages)
        self.max_speeds = ZERO_SPEEDS
        self._current: dict[int, tuple[int, int]] = {}  # uid -> (key, tid)
        self._partition_label: dict[int, float] = {}
        self._partition_count: dict[int, int] = {}
        self._svq: dict[int, int] = {}
        if sv_map is not None:
            self._svq = {uid: layout.quantize_sv(sv) for uid, sv in sv_map.values.items()}

    @property
    def buffer(self) -> PageBuffer:
        return self.tree.buffer

    @property
    def entry_count(self) -> int:
        return self.tree.entry_count

    def key_for(self, obj: MovingObject) -> tuple[int, int, float]:
        """Key, partition, and label timestamp the object indexes under."""
        label = label_timestamp(obj.t_u, self.time_cfg)
        tid = index_partition(label, self.time_cfg)
        px, py = position_at(obj, label)
        side = self.grid.L
        px = min(max(px, 0.0), side)
        py = min(max(py, 0.0), side)
        zv = z_encode(cell_of(px, py, self.grid), self.grid)
        if self.sv_map is not None:
            key = self.layout.peb_key_q(tid, self._svq[obj.uid], zv)
        else:
            key = self.layout.bx_key(tid, zv)
        return key, tid, label

    def insert(self, obj: MovingObject) -> None:
        if obj.uid in self._current:
            raise ValueError(f"object {obj.uid} already indexed; use update()")
        key, tid, label = self.key_for(obj)
        if self._partition_count.get(tid, 0) > 0 and self._partition_label[tid] != label:
            raise ValueError(
                f"partition {tid} still holds entries for label {self._partition_label[tid]}"
            )
        self.tree.insert(LeafEntry(key, obj.uid, obj.x, obj.y, obj.vx, obj.vy, obj.t_u, obj.uid))
        self._current[obj.uid] = (key, tid)
        self._partition_label[tid] = label
        self._partition_count[tid] = self._partition_count.get(tid, 0) + 1
        self.max_speeds = self.max_speeds.absorb(obj.vx, obj.vy)

    def delete(self, uid: int) -> None:
        key, tid = self._current.pop(uid)
        self.tree.delete(key, uid)
        remaining = self._partition_count[tid] - 1
        if remaining:
            self._partition_count[tid] = remaining
        else:
            del self._partition_count[tid]
            del self._partition_label[tid]

    def update(self, obj: MovingObject, now: float | None = None) -> None:
        """Replace the object's entry with a fresh one as of ``now``."""
        if now is not None and now != obj.t_u:
            obj = replace(obj, t_u=now)
        self.delete(obj.uid)
        self.insert(obj)

    def live_partitions(self) -> list[tuple[int, float]]:
        """Partitions currently holding entries, with their labels."""
        return sorted((tid, self._partition_label[tid]) for tid in self._partition_count)

    def contains(self, uid: int) -> bool:
        return uid in self._current

    def stats(self) -> TreeStats:
        return self.tree.stats()

    def reset_io(self, cold: bool = True) -> None:
        if cold:
            self.buffer.clear()
        else:
            self.buffer.reset_counters()

    # -- snapshot -------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        snap = {
            "kind": self.kind,
            "time_cfg": {"delta_t_mu": self.time_cfg.delta_t_mu, "n": self.time_cfg.n},
            "grid": {"L": self.grid.L, "levels": self.grid.levels, "y_low": self.grid.y_low},
            "layout": {
                "tid_bits": self.layout.tid_bits,
                "sv_bits": self.layout.sv_bits,
                "zv_bits": self.layout.zv_bits,
                "frac_bits": self.layout.frac_bits,
            },
            "max_speeds": list(self.max_speeds),
            "partition_labels": {str(t): lab for t, lab in self._partition_label.items()},
            "tree": self.tree.to_snapshot(),
        }
        Path(path).write_text(json.dumps(snap))

    @classmethod
    def load(cls, path: str | Path, sv_map: SequenceValueMap | None = None) -> "MovingObjectIndex":
        snap = json.loads(Path(path).read_text())
        if snap["kind"] == "peb" and sv_map is None:
            raise ValueError("loading a policy-embedded index requires its sequence value map")
        if snap["kind"] == "bx" and sv_map is not None:
            raise ValueError("baseline snapshot does not take a sequence value map")
        index = cls(
            TimePartitionConfig(**snap["time_cfg"]),
            GridConfig(**snap["grid"]),
            KeyLayout(**snap["layout"]),
            sv_map=sv_map,
            buffer_pages=snap["tree"]["buffer_pages"],
            page_size=snap["tree"]["page_size"],
        )
        index.tree = BPlusTree.from_snapshot(snap["tree"])
        index.max_speeds = DirectionalSpeeds(*snap["max_speeds"])
        index._partition_label = {int(t): lab for t, lab in snap["partition_labels"].items()}
        tid_shift = index.layout.zv_bits
        if snap["kind"] == "peb":
            tid_shift += index.layout.sv_bits
        counts: dict[int, int] = {}
        for entry in index.tree.iter_entries():
            tid = entry.key >> tid_shift
            index._current[entry.uid] = (entry.key, tid)
            counts[tid] = counts.get(tid, 0) + 1
        index._partition_count = counts
        index.buffer.clear()
        return index
