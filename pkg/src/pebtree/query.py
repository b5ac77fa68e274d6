"""Privacy-aware range and k-nearest-neighbor query processing.

Two engines answer the same queries:

* :class:`PebQueryEngine` runs against the policy-embedded index.  A range
  query enlarges the window per time partition, decomposes it into curve
  intervals, crosses those with the issuer's friend sequence values, and
  scans the resulting key intervals, skipping the remaining intervals of a
  sequence value once its user has been retrieved (a user has only one
  location).  The kNN query walks a (friend row x expansion round) search
  matrix in anti-diagonal order, keeps one curve interval per round, and
  finishes with a vertical scan of the last visited column shortened to
  the square of side twice the k'th candidate distance.

* :class:`BaselineQueryEngine` runs against the baseline index: a plain
  spatial query first, policy filtering after, with kNN by incrementally
  expanded range queries.

Brute-force oracles apply the query definitions literally over all users
and anchor every correctness test.  Queries are read-only; each call
keeps its scratch state local, so a quiesced index can serve concurrent
readers (benchmarks run single-threaded for reproducible counters).
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

from .keys import KeyLayout, SequenceValueMap
from .motion import MovingObject
from .policy import PolicyStore, point_in_rect, time_in_set
from .store import DirectionalSpeeds, LeafEntry, MovingObjectIndex
from .zcurve import cells_covering, z_corner_interval, z_decompose

Rect = tuple[float, float, float, float]

# Query windows are snapped outward to blocks of 2^SCAN_BLOCK_SHIFT cells per
# side before curve decomposition.  That bounds the number of key intervals
# per window; the scanned key set only grows, so results are unaffected.
SCAN_BLOCK_SHIFT = 4


@dataclass(frozen=True)
class PrqRequest:
    """Range query: issuer, window rectangle, query time."""

    qid: int
    rect: Rect
    t_q: float

    def __post_init__(self) -> None:
        x_lo, y_lo, x_hi, y_hi = self.rect
        if x_lo > x_hi or y_lo > y_hi:
            raise ValueError(f"degenerate query rectangle {self.rect}")


@dataclass(frozen=True)
class PknnRequest:
    """kNN query: issuer, query point, neighbor count, query time."""

    qid: int
    qloc: tuple[float, float]
    k: int
    t_q: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class PknnResult:
    """Neighbors as (uid, distance) ascending; ``short`` flags fewer than k."""

    neighbors: tuple[tuple[int, float], ...]
    short: bool

    def kth_distance(self) -> float | None:
        return self.neighbors[-1][1] if self.neighbors else None


def enlarge(rect: Rect, t_lab: float, t_q: float, speeds: DirectionalSpeeds, space_side: float) -> Rect:
    """Expand a query window so index-time positions of matches are covered.

    Entries are stored at their label-timestamp positions.  Each window
    side moves outward by the matching directional maximum speed times the
    label/query time gap, then clamps to the space; any object whose
    query-time position lies in ``rect`` has its label-time position in
    the result.
    """
    x_lo, y_lo, x_hi, y_hi = rect
    gap = t_q - t_lab
    if gap >= 0:
        # labels in the past: an object now inside drifted in since t_lab
        x_lo -= speeds.pos_x * gap
        x_hi += speeds.neg_x * gap
        y_lo -= speeds.pos_y * gap
        y_hi += speeds.neg_y * gap
    else:
        x_lo -= speeds.neg_x * -gap
        x_hi += speeds.pos_x * -gap
        y_lo -= speeds.neg_y * -gap
        y_hi += speeds.pos_y * -gap
    return (max(x_lo, 0.0), max(y_lo, 0.0), min(x_hi, space_side), min(y_hi, space_side))


def estimate_dk(k: int, n_users: int, side: float) -> float:
    """Estimated distance to the k'th nearest of ``n_users`` uniform users."""
    if not 1 <= k <= n_users:
        raise ValueError("need 1 <= k <= number of users")
    ratio = (k / n_users) ** 0.5
    return side * (2.0 / math.sqrt(math.pi)) * (1.0 - math.sqrt(1.0 - ratio))


@dataclass(frozen=True)
class KeyInterval:
    lo: int
    hi: int
    uids: frozenset[int]


def build_prq_key_intervals(
    sv_rows: Sequence[tuple[int, tuple[int, ...]] | int],
    z_intervals: Sequence[tuple[int, int]],
    tid: int,
    layout: KeyLayout,
) -> list[KeyInterval]:
    """Cross friend sequence values with curve intervals; refine to disjoint.

    Rows are (quantized sv, uids) pairs (bare ints are accepted for
    untagged values).  Output intervals are sorted, pairwise disjoint and
    non-adjacent, cover exactly the same key set as the inputs, and carry
    the union of the uids that produced them.
    """
    raw: list[tuple[int, int, frozenset[int]]] = []
    for row in sv_rows:
        svq, uids = (row, ()) if isinstance(row, int) else row
        for zs, ze in z_intervals:
            if zs > ze:
                raise ValueError(f"bad z-interval ({zs}, {ze})")
            raw.append((layout.peb_key_q(tid, svq, zs), layout.peb_key_q(tid, svq, ze), frozenset(uids)))
    raw.sort(key=lambda t: (t[0], t[1]))
    merged: list[list] = []
    for lo, hi, uids in raw:
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
            merged[-1][2] |= uids
        else:
            merged.append([lo, hi, set(uids)])
    return [KeyInterval(lo, hi, frozenset(uids)) for lo, hi, uids in merged]


def antidiagonal_order(n_rows: int, n_cols: int) -> Iterator[tuple[int, int]]:
    """Triangular search order: anti-diagonals from the upper-left corner.

    Yields 0-based (row, column) pairs; within a diagonal the column
    decreases, so the sequence alternates between advancing the curve
    radius and advancing the sequence-value row.
    """
    for d in range(n_rows + n_cols - 1):
        for r in range(max(0, d - n_cols + 1), min(d, n_rows - 1) + 1):
            yield r, d - r


TraversalOrder = Callable[[int, int], Iterator[tuple[int, int]]]


def _visible(store: PolicyStore, owner: int, viewer: int, x: float, y: float, t: float) -> bool:
    # hot path shared by engines and oracles: no id validation here
    per_owner = store._directed.get(owner)
    if per_owner is None:
        return False
    p = per_owner.get(viewer)
    if p is None:
        return False
    return point_in_rect(x, y, p.rect) and time_in_set(t, p.t_int, store.day)


class FriendLists:
    """Per-user rows of the sequence values that can ever see the user.

    A user's row list holds the quantized sequence values of every owner
    with a policy naming the user, ascending, each tagged with the owner
    uids that quantize to it.  Built lazily and cached per user.
    """

    def __init__(self, store: PolicyStore, sv_map: SequenceValueMap, layout: KeyLayout) -> None:
        self.store = store
        self.sv_map = sv_map
        self.layout = layout
        self._rows: dict[int, tuple[tuple[int, tuple[int, ...]], ...]] = {}

    def rows(self, viewer: int) -> tuple[tuple[int, tuple[int, ...]], ...]:
        cached = self._rows.get(viewer)
        if cached is None:
            by_svq: dict[int, list[int]] = {}
            for owner in self.store.owners_naming(viewer):
                by_svq.setdefault(self.layout.quantize_sv(self.sv_map[owner]), []).append(owner)
            cached = tuple(sorted((svq, tuple(sorted(us))) for svq, us in by_svq.items()))
            self._rows[viewer] = cached
        return cached

    def sv_bounds(self, viewer: int) -> tuple[int, int] | None:
        rows = self.rows(viewer)
        if not rows:
            return None
        return rows[0][0], rows[-1][0]


class _RowSpan:
    """Cached location of one (partition, sequence value) key span.

    Built from a single descent plus a sibling walk; later probes bisect
    the cached entry list and re-charge the pages the walk would touch.
    """

    __slots__ = ("path", "zs", "entries", "entry_pages", "bound_zs", "bound_pages")

    def __init__(self, path, zs, entries, entry_pages, bound_zs, bound_pages):
        self.path = path
        self.zs = zs
        self.entries = entries
        self.entry_pages = entry_pages
        self.bound_zs = bound_zs
        self.bound_pages = bound_pages

    def landing_page(self, z: int) -> int:
        return self.bound_pages[bisect_right(self.bound_zs, z) - 1]


class _EngineBase:
    def __init__(self, index: MovingObjectIndex, store: PolicyStore, scan_block_shift: int = SCAN_BLOCK_SHIFT) -> None:
        self.index = index
        self.store = store
        self.grid = index.grid
        self.layout = index.layout
        self.block_shift = scan_block_shift

    def _zivs(self, rect: Rect) -> list[tuple[int, int]]:
        return z_decompose(cells_covering(rect, self.grid), self.grid, self.block_shift)

    def _full_space(self) -> Rect:
        side = self.grid.L
        return (0.0, 0.0, side, side)


class PebQueryEngine(_EngineBase):
    """Query processor for the policy-embedded index."""

    def __init__(
        self,
        index: MovingObjectIndex,
        store: PolicyStore,
        friends: FriendLists,
        scan_block_shift: int = SCAN_BLOCK_SHIFT,
        traversal: TraversalOrder = antidiagonal_order,
    ) -> None:
        if index.kind != "peb":
            raise ValueError("engine requires a policy-embedded index")
        super().__init__(index, store, scan_block_shift)
        self.friends = friends
        self.traversal = traversal

    # -- row spans ------------------------------------------------------------

    def _row_span(self, tid: int, svq: int) -> _RowSpan:
        layout = self.layout
        tree = self.index.tree
        hi_key = layout.peb_key_q(tid, svq, self.grid.max_z)
        lo_key = layout.peb_key_q(tid, svq, 0)
        path, leaf, i = tree.descend(lo_key)
        zs: list[int] = []
        entries: list[LeafEntry] = []
        entry_pages: list[int] = []
        bound_zs = [0]
        bound_pages = [leaf.page_id]
        node = leaf
        fresh = False
        while True:
            if fresh:
                if node.keys and node.keys[0][0] <= hi_key:
                    bound_zs.append(layout.zv_of(node.keys[0][0]))
                    bound_pages.append(node.page_id)
                fresh = False
            keys = node.keys
            while i < len(keys):
                k = keys[i][0]
                if k > hi_key:
                    return _RowSpan(path, zs, entries, entry_pages, bound_zs, bound_pages)
                zs.append(layout.zv_of(k))
                entries.append(node.entries[i])
                entry_pages.append(node.page_id)
                i += 1
            if node.next_leaf is None:
                return _RowSpan(path, zs, entries, entry_pages, bound_zs, bound_pages)
            node = tree._node(node.next_leaf)
            i = 0
            fresh = True

    def _probe(self, span: _RowSpan, zs: int, ze: int) -> tuple[LeafEntry, ...]:
        """Entries of a row span inside [zs, ze]; charges the pages touched."""
        tree = self.index.tree
        for pid in span.path:
            tree.touch_page(pid)
        i = bisect_left(span.zs, zs)
        j = bisect_right(span.zs, ze)
        if i == j:
            tree.touch_page(span.landing_page(zs))
            return ()
        last = None
        for pid in span.entry_pages[i:j]:
            if pid != last:
                tree.touch_page(pid)
                last = pid
        return tuple(span.entries[i:j])

    def _probe_new(self, span: _RowSpan, zs: int, ze: int) -> tuple[LeafEntry, ...]:
        """Entries inside [zs, ze] served from the retained row cursor.

        The span walk already fetched (and charged) these pages, so a
        widening rescan of the same row costs no further I/O.
        """
        i = bisect_left(span.zs, zs)
        j = bisect_right(span.zs, ze)
        return tuple(span.entries[i:j])

    # -- range query -----------------------------------------------------------

    def prq(self, req: PrqRequest, skip_rule: bool = True) -> set[int]:
        """Users inside the window at query time who allow the issuer to see them.

        ``skip_rule=False`` disables skipping of the remaining intervals of
        an already-retrieved user's sequence value; results are identical,
        only the I/O changes.
        """
        self.store.check_user(req.qid)
        rows = self.friends.rows(req.qid)
        result: set[int] = set()
        if not rows:
            return result
        store = self.store
        t_q = req.t_q
        rect = req.rect
        seen: set[int] = set()
        spans: dict[tuple[int, int], _RowSpan] = {}
        for tid, label in self.index.live_partitions():
            enlarged = enlarge(rect, label, t_q, self.index.max_speeds, self.grid.L)
            zivs = self._zivs(enlarged)
            if not zivs:
                continue
            for svq, uids in rows:
                if skip_rule and all(u in seen for u in uids):
                    continue
                span = spans.get((tid, svq))
                if span is None:
                    span = spans[(tid, svq)] = self._row_span(tid, svq)
                for zs, ze in zivs:
                    if skip_rule and all(u in seen for u in uids):
                        break
                    for entry in self._probe(span, zs, ze):
                        uid = entry.uid
                        seen.add(uid)
                        if uid not in result:
                            px = entry.x + entry.vx * (t_q - entry.t)
                            py = entry.y + entry.vy * (t_q - entry.t)
                            if (
                                rect[0] <= px <= rect[2]
                                and rect[1] <= py <= rect[3]
                                and _visible(store, uid, req.qid, px, py, t_q)
                            ):
                                result.add(uid)
        return result

    # -- kNN query ---------------------------------------------------------------

    def pknn(self, req: PknnRequest) -> PknnResult:
        """The k visible users nearest the query point at query time.

        Partitions are searched one at a time.  Within a partition the
        (friend row x expansion round) matrix is walked in the traversal
        order; each visited cell scans only the part of its round's curve
        interval not already covered for that row (rounds nest, so earlier
        work is never rescanned).  Once k verified candidates sit inside
        the current round's inscribed circle, the remaining rows of the
        column are vertically scanned with the interval shortened to the
        square of side twice the k'th candidate distance, which keeps the
        result exact no matter where the walk stopped.  Fewer than k
        visible users yields all of them with the result flagged short.
        """
        self.store.check_user(req.qid)
        rows = self.friends.rows(req.qid)
        k = req.k
        if not rows:
            return PknnResult((), short=True)
        n = self.index.entry_count
        if n == 0:
            return PknnResult((), short=True)
        live = self.index.live_partitions()
        if not live:
            return PknnResult((), short=True)
        side = self.grid.L
        r_q = estimate_dk(min(k, n), n, side) / k
        if r_q <= 0:
            r_q = self.grid.cell_size
        qx, qy = req.qloc
        t_q = req.t_q
        store = self.store
        # the column whose square, clamped, covers the whole space
        needed = max(qx, side - qx, qy, side - qy)
        n_cols = max(1, math.ceil(needed / r_q))
        m = len(rows)

        candidates: dict[int, float] = {}
        seen: set[int] = set()

        def interval_for(square: Rect, tid: int, label: float) -> tuple[int, int]:
            cells = cells_covering(enlarge(square, label, t_q, self.index.max_speeds, side), self.grid)
            return z_corner_interval(cells, self.grid)

        def process(entry: LeafEntry) -> None:
            uid = entry.uid
            if uid in seen:
                return
            seen.add(uid)
            px = entry.x + entry.vx * (t_q - entry.t)
            py = entry.y + entry.vy * (t_q - entry.t)
            if _visible(store, uid, req.qid, px, py, t_q):
                candidates[uid] = math.hypot(px - qx, py - qy)

        def kth() -> float | None:
            if len(candidates) < k:
                return None
            return sorted(candidates.values())[k - 1]

        def search_partition(tid: int, label: float) -> None:
            spans: dict[int, _RowSpan] = {}
            covered: dict[int, tuple[int, int]] = {}  # row -> scanned z bounds
            col_ivs: dict[int, tuple[int, int]] = {}

            def column_interval(col: int) -> tuple[int, int]:
                iv = col_ivs.get(col)
                if iv is None:
                    radius = (col + 1) * r_q
                    square = (
                        max(qx - radius, 0.0),
                        max(qy - radius, 0.0),
                        min(qx + radius, side),
                        min(qy + radius, side),
                    )
                    iv = col_ivs[col] = interval_for(square, tid, label)
                return iv

            def scan_row(row_i: int, zs: int, ze: int) -> None:
                # scan only the uncovered remainder; the retained row span
                # (read once) proves emptiness without extra page fetches
                svq = rows[row_i][0]
                span = spans.get(row_i)
                if span is None:
                    span = spans[row_i] = self._row_span(tid, svq)
                done = covered.get(row_i)
                if done is None:
                    deltas = [(zs, ze)]
                    covered[row_i] = (zs, ze)
                else:
                    deltas = []
                    if zs < done[0]:
                        deltas.append((zs, done[0] - 1))
                    if ze > done[1]:
                        deltas.append((done[1] + 1, ze))
                    covered[row_i] = (min(zs, done[0]), max(ze, done[1]))
                for d_lo, d_hi in deltas:
                    for entry in self._probe_new(span, d_lo, d_hi):
                        process(entry)

            visited_cols: dict[int, int] = {}  # row -> last visited column
            for row_i, col in self.traversal(m, n_cols):
                if all(u in seen for u in rows[row_i][1]):
                    visited_cols[row_i] = col
                    continue
                zs, ze = column_interval(col)
                scan_row(row_i, zs, ze)
                visited_cols[row_i] = col
                kdist = kth()
                if kdist is not None and kdist <= (col + 1) * r_q:
                    # vertical scan of this column, shortened to 2*kdist
                    square = (
                        max(qx - kdist, 0.0),
                        max(qy - kdist, 0.0),
                        min(qx + kdist, side),
                        min(qy + kdist, side),
                    )
                    v_lo, v_hi = interval_for(square, tid, label)
                    for other in range(m):
                        if visited_cols.get(other) == col:
                            continue
                        if all(u in seen for u in rows[other][1]):
                            continue
                        scan_row(other, v_lo, v_hi)
                    return

        for tid, label in live:
            search_partition(tid, label)
        ranked = sorted((d, uid) for uid, d in candidates.items())[:k]
        return PknnResult(tuple((uid, d) for d, uid in ranked), short=len(ranked) < k)


class BaselineQueryEngine(_EngineBase):
    """Spatial-index-then-filter query processor for the baseline index."""

    def __init__(self, index: MovingObjectIndex, store: PolicyStore, scan_block_shift: int = SCAN_BLOCK_SHIFT) -> None:
        if index.kind != "bx":
            raise ValueError("engine requires a baseline index")
        super().__init__(index, store, scan_block_shift)

    def _spatial_candidates(self, rect: Rect, t_q: float, scanned: dict[int, list[tuple[int, int]]] | None = None) -> list[LeafEntry]:
        """Entries whose window scan retrieves them for this rectangle.

        ``scanned`` carries per-partition curve intervals already covered
        by earlier rounds of an incremental search; newly covered parts are
        merged back in.
        """
        out: list[LeafEntry] = []
        layout = self.layout
        tree = self.index.tree
        for tid, label in self.index.live_partitions():
            enlarged = enlarge(rect, label, t_q, self.index.max_speeds, self.grid.L)
            zivs = self._zivs(enlarged)
            if scanned is not None:
                done = scanned.setdefault(tid, [])
                zivs = subtract_intervals(zivs, done)
                scanned[tid] = merge_intervals(done, zivs)
            if not zivs:
                continue
            intervals = [(layout.bx_key(tid, zs), layout.bx_key(tid, ze)) for zs, ze in zivs]
            tree.scan_intervals(intervals, out.append)
        return out

    def range_query(self, req: PrqRequest) -> set[int]:
        """Same contract as the policy-embedded range query."""
        self.store.check_user(req.qid)
        rect = req.rect
        t_q = req.t_q
        store = self.store
        result: set[int] = set()
        for entry in self._spatial_candidates(rect, t_q):
            px = entry.x + entry.vx * (t_q - entry.t)
            py = entry.y + entry.vy * (t_q - entry.t)
            if rect[0] <= px <= rect[2] and rect[1] <= py <= rect[3]:
                # spatial hit; now the policy filter
                if _visible(store, entry.uid, req.qid, px, py, t_q):
                    result.add(entry.uid)
        return result

    def knn_query(self, req: PknnRequest) -> PknnResult:
        """Same contract as the policy-embedded kNN query."""
        self.store.check_user(req.qid)
        k = req.k
        n = self.index.entry_count
        if n == 0:
            return PknnResult((), short=True)
        side = self.grid.L
        qx, qy = req.qloc
        t_q = req.t_q
        store = self.store
        radius = estimate_dk(min(k, n), n, side) / k
        if radius <= 0:
            radius = self.grid.cell_size
        scanned: dict[int, list[tuple[int, int]]] = {}
        candidates: dict[int, float] = {}
        while True:
            square = (max(qx - radius, 0.0), max(qy - radius, 0.0), min(qx + radius, side), min(qy + radius, side))
            covers_all = square == (0.0, 0.0, side, side)
            for entry in self._spatial_candidates(square, t_q, scanned):
                if entry.uid in candidates:
                    continue
                px = entry.x + entry.vx * (t_q - entry.t)
                py = entry.y + entry.vy * (t_q - entry.t)
                if _visible(store, entry.uid, req.qid, px, py, t_q):
                    candidates[entry.uid] = math.hypot(px - qx, py - qy)
            if len(candidates) >= k:
                kdist = sorted(candidates.values())[k - 1]
                if kdist <= radius:
                    break
            if covers_all:
                break
            radius *= 2.0
        ranked = sorted((d, uid) for uid, d in candidates.items())[:k]
        return PknnResult(tuple((uid, d) for d, uid in ranked), short=len(ranked) < k)


def subtract_intervals(new: list[tuple[int, int]], covered: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Parts of sorted disjoint ``new`` not covered by sorted disjoint ``covered``."""
    out: list[tuple[int, int]] = []
    ci = 0
    n_cov = len(covered)
    for lo, hi in new:
        while ci < n_cov and covered[ci][1] < lo:
            ci += 1
        start = lo
        j = ci
        while j < n_cov and covered[j][0] <= hi:
            c_lo, c_hi = covered[j]
            if c_lo > start:
                out.append((start, min(c_lo - 1, hi)))
            start = max(start, c_hi + 1)
            if start > hi:
                break
            j += 1
        if start <= hi:
            out.append((start, hi))
    return out


def merge_intervals(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Union of two interval lists as sorted disjoint non-adjacent intervals."""
    merged: list[list[int]] = []
    for lo, hi in sorted(a + b):
        if merged and lo <= merged[-1][1] + 1:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


# -- brute-force oracles --------------------------------------------------------


def oracle_range(objects: Iterable[MovingObject], store: PolicyStore, req: PrqRequest) -> set[int]:
    """Linear-scan reference: the query definition applied to every user."""
    store.check_user(req.qid)
    x_lo, y_lo, x_hi, y_hi = req.rect
    t_q = req.t_q
    qid = req.qid
    out: set[int] = set()
    for obj in objects:
        px = obj.x + obj.vx * (t_q - obj.t_u)
        py = obj.y + obj.vy * (t_q - obj.t_u)
        if x_lo <= px <= x_hi and y_lo <= py <= y_hi and _visible(store, obj.uid, qid, px, py, t_q):
            out.add(obj.uid)
    return out


def oracle_knn(objects: Iterable[MovingObject], store: PolicyStore, req: PknnRequest) -> PknnResult:
    """Linear-scan reference kNN; ties at equal distance break by ascending uid."""
    store.check_user(req.qid)
    qx, qy = req.qloc
    t_q = req.t_q
    qid = req.qid
    ranked: list[tuple[float, int]] = []
    for obj in objects:
        px = obj.x + obj.vx * (t_q - obj.t_u)
        py = obj.y + obj.vy * (t_q - obj.t_u)
        if _visible(store, obj.uid, qid, px, py, t_q):
            ranked.append((math.hypot(px - qx, py - qy), obj.uid))
    ranked.sort()
    top = ranked[: req.k]
    return PknnResult(tuple((uid, d) for d, uid in top), short=len(top) < req.k)
