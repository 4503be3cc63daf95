"""State database model: append-only COW B+ tree, lock manager, backends.

The document-store backend routes every write through a copy-on-write
B+ tree whose nodes are split by a byte budget (chunkify), mirroring how
an append-only document store behaves on disk: each update rewrites the
root-to-leaf path, and oversized nodes are greedily packed left-to-right
into chunks no larger than ``chunk_size_bytes``. Node cost accounting
(nodes written, bytes appended, a small write-back cache) feeds the
timing model; the embedded key-value backend skips all of it and charges
a flat per-document write cost.
"""

from __future__ import annotations

import zlib
from bisect import bisect_left
from collections import OrderedDict, deque
from dataclasses import dataclass
from operator import itemgetter

from .engine import SimulationError

NODE_HEADER_BYTES = 32
ENTRY_STUB_BYTES = 16

_first = itemgetter(0)


def _entry_size(key: str) -> int:
    return len(key) + ENTRY_STUB_BYTES


def _chunkify(entries: list, budget: int,
              min_entries: int = 1) -> list[tuple[list, int]]:
    """Greedy left-to-right packing: close a chunk when the next entry
    would push it past the byte budget. A chunk holding ``min_entries``
    or fewer may exceed the budget rather than split further; internal
    levels use a minimum of 2 so every split strictly shrinks the level
    (fanout-1 chains would otherwise never reach a single root). Returns
    ``(chunk, byte_size)`` pairs so callers can account for bytes without
    re-walking the entries."""
    if not entries:
        return []
    total = NODE_HEADER_BYTES + ENTRY_STUB_BYTES * len(entries) \
        + sum([len(e[0]) for e in entries])
    if total <= budget or len(entries) <= min_entries:
        # Common case: everything packs into one chunk. Callers hand over
        # freshly built lists and never mutate them afterwards, so the
        # list can be adopted as the node payload without copying.
        return [(entries, total)]
    chunks = []
    current: list = []
    size = NODE_HEADER_BYTES
    for entry in entries:
        es = _entry_size(entry[0])
        if len(current) >= min_entries and size + es > budget:
            chunks.append((current, size))
            current = []
            size = NODE_HEADER_BYTES
        current.append(entry)
        size += es
    if current:
        chunks.append((current, size))
    return chunks


@dataclass
class WriteStats:
    nodes_written: int
    bytes_appended: int
    leaf_cache_hit: bool


class AppendOnlyBTree:
    """COW B+ tree over string keys. Nodes live in an append-only arena;
    every mutation appends fresh copies of the touched root-to-leaf path.
    All leaves sit at equal depth (splits propagate upward; only a root
    split deepens the tree)."""

    def __init__(self, chunk_size_bytes: int = 1279, cache_entries: int = 1):
        if chunk_size_bytes <= NODE_HEADER_BYTES:
            raise ValueError("chunk size must exceed the node header")
        self.chunk = chunk_size_bytes
        # nodes[i] = ("L", [(key, value), ...]) or ("I", [(max_key, child_ref), ...])
        self.nodes: list = []
        self.checksums: list[int] = []
        self.root = -1
        self.depth = 0
        self.size = 0
        self.inserts = 0
        self.updates = 0
        self.nodes_written = 0
        self.bytes_appended = 0
        self.cache_hits = 0
        # LRU of recently written leaf refs; capacity 1 = "the leaf written
        # by the previous operation", which is the default semantics.
        self._leaf_cache: OrderedDict[int, None] = OrderedDict()
        self._cache_entries = max(1, cache_entries)

    # -- arena -------------------------------------------------------------

    def _append_node(self, node, size: int | None = None) -> int:
        ref = len(self.nodes)
        self.nodes.append(node)
        if size is None:
            entries = node[1]
            size = NODE_HEADER_BYTES + ENTRY_STUB_BYTES * len(entries) \
                + sum([len(e[0]) for e in entries])
        self.checksums.append(self._checksum(node))
        self.nodes_written += 1
        self.bytes_appended += size
        return ref

    @staticmethod
    def _checksum(node) -> int:
        # repr of nested tuples/strings/ints is deterministic and fast.
        return zlib.crc32(repr(node).encode())

    def node_size_bytes(self, ref: int) -> int:
        node = self.nodes[ref]
        return NODE_HEADER_BYTES + sum(_entry_size(e[0]) for e in node[1])

    def verify_integrity(self) -> bool:
        """Re-hash every node in the arena; append-only discipline means
        nothing may have changed since creation."""
        return all(self._checksum(self.nodes[i]) == c
                   for i, c in enumerate(self.checksums))

    # -- operations ----------------------------------------------------------

    def insert(self, key: str, value) -> WriteStats:
        nodes_before = self.nodes_written
        bytes_before = self.bytes_appended
        if self.root < 0:
            ref = self._append_node(("L", [(key, value)]))
            self.root = ref
            self.depth = 1
            self.size = 1
            self.inserts += 1
            self._touch_cache(ref)
            return WriteStats(self.nodes_written - nodes_before,
                              self.bytes_appended - bytes_before, False)

        # Descend, remembering (node_ref, child_index) for the COW rebuild.
        path = []
        ref = self.root
        node = self.nodes[ref]
        while node[0] == "I":
            entries = node[1]
            lo, hi = 0, len(entries)
            while lo < hi:  # first entry with max_key >= key
                mid = (lo + hi) >> 1
                if entries[mid][0] < key:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == len(entries):
                lo -= 1  # beyond the max key: descend rightmost, bump max
            path.append((ref, lo))
            ref = entries[lo][1]
            node = self.nodes[ref]

        hit = ref in self._leaf_cache
        if hit:
            self.cache_hits += 1

        leaf_entries = list(node[1])
        pos = bisect_left(leaf_entries, key, key=_first)
        if pos < len(leaf_entries) and leaf_entries[pos][0] == key:
            leaf_entries[pos] = (key, value)
            self.updates += 1
        else:
            leaf_entries.insert(pos, (key, value))
            self.inserts += 1
            self.size += 1

        # Write the new leaf chunk(s), then rebuild the path upward.
        new_entries = []
        cache_ref = -1
        for chunk, csize in _chunkify(leaf_entries, self.chunk):
            cref = self._append_node(("L", chunk), csize)
            new_entries.append((chunk[-1][0], cref))
            if chunk[0][0] <= key <= chunk[-1][0]:
                cache_ref = cref
        if cache_ref < 0:
            cache_ref = new_entries[-1][1]

        for parent_ref, child_idx in reversed(path):
            entries = list(self.nodes[parent_ref][1])
            entries[child_idx:child_idx + 1] = new_entries
            new_entries = [(chunk[-1][0], self._append_node(("I", chunk), csize))
                           for chunk, csize in _chunkify(entries, self.chunk, 2)]

        # A root that split grows the tree by one level per pass.
        while len(new_entries) > 1:
            new_entries = [(chunk[-1][0], self._append_node(("I", chunk), csize))
                           for chunk, csize in _chunkify(new_entries, self.chunk, 2)]
            self.depth += 1
        self.root = new_entries[0][1]

        self._touch_cache(cache_ref)
        return WriteStats(self.nodes_written - nodes_before,
                          self.bytes_appended - bytes_before, hit)

    def _touch_cache(self, ref: int) -> None:
        cache = self._leaf_cache
        cache[ref] = None
        cache.move_to_end(ref)
        while len(cache) > self._cache_entries:
            cache.popitem(last=False)

    def get(self, key: str):
        if self.root < 0:
            return None
        node = self.nodes[self.root]
        while node[0] == "I":
            entries = node[1]
            idx = bisect_left(entries, key, key=_first)
            if idx == len(entries):
                return None
            node = self.nodes[entries[idx][1]]
        entries = node[1]
        pos = bisect_left(entries, key, key=_first)
        if pos < len(entries) and entries[pos][0] == key:
            return entries[pos][1]
        return None

    def items(self) -> list:
        """In-order (key-sorted) contents."""
        out: list = []
        if self.root < 0:
            return out
        stack = [self.root]
        # Children are kept in key order, so a reversed DFS yields order.
        while stack:
            node = self.nodes[stack.pop()]
            if node[0] == "L":
                out.extend(node[1])
            else:
                stack.extend(ref for _k, ref in reversed(node[1]))
        return out

    def leaf_depths(self) -> set[int]:
        depths = set()
        if self.root < 0:
            return depths
        stack = [(self.root, 1)]
        while stack:
            ref, d = stack.pop()
            node = self.nodes[ref]
            if node[0] == "L":
                depths.add(d)
            else:
                stack.extend((cref, d + 1) for _k, cref in node[1])
        return depths

    def stats(self) -> dict:
        ops = self.inserts + self.updates
        return {
            "inserts": self.inserts,
            "updates": self.updates,
            "nodes_written": self.nodes_written,
            "bytes_appended": self.bytes_appended,
            "depth": self.depth,
            "cache_hit_rate": (self.cache_hits / ops) if ops else 0.0,
        }


class RwLock:
    """Shared/exclusive lock with FIFO granting and reader coalescing:
    a run of shared requests at the head of the queue is granted together;
    shared requests arriving behind a waiting exclusive must queue."""

    __slots__ = ("shared_owners", "exclusive_owner", "queue")

    def __init__(self):
        self.shared_owners: set = set()
        self.exclusive_owner = None
        self.queue: deque = deque()  # (mode, owner, cb, arg)

    def acquire_shared(self, owner, cb, arg) -> None:
        if owner in self.shared_owners or owner == self.exclusive_owner:
            raise SimulationError(f"double lock acquire by {owner!r}")
        if self.exclusive_owner is None and not self.queue:
            self.shared_owners.add(owner)
            cb(arg)
        else:
            self.queue.append(("S", owner, cb, arg))

    def acquire_exclusive(self, owner, cb, arg) -> None:
        if owner in self.shared_owners or owner == self.exclusive_owner:
            raise SimulationError(f"double lock acquire by {owner!r}")
        if self.exclusive_owner is None and not self.shared_owners and not self.queue:
            self.exclusive_owner = owner
            cb(arg)
        else:
            self.queue.append(("X", owner, cb, arg))

    def release_shared(self, owner) -> None:
        self.shared_owners.remove(owner)
        if not self.shared_owners:
            self._drain()

    def release_exclusive(self, owner) -> None:
        if self.exclusive_owner != owner:
            raise SimulationError(f"{owner!r} released an exclusive lock it does not hold")
        self.exclusive_owner = None
        self._drain()

    def _drain(self) -> None:
        if not self.queue or self.exclusive_owner is not None or self.shared_owners:
            return
        mode, owner, cb, arg = self.queue.popleft()
        if mode == "X":
            self.exclusive_owner = owner
            cb(arg)
            return
        grants = [(owner, cb, arg)]
        while self.queue and self.queue[0][0] == "S":
            _m, o, c, a = self.queue.popleft()
            grants.append((o, c, a))
        for o, _c, _a in grants:
            self.shared_owners.add(o)
        for _o, c, a in grants:
            c(a)


@dataclass
class DocStoreCosts:
    per_call_overhead_us: int = 3000
    per_doc_write_us: int = 8
    per_node_append_us: int = 25
    cache_hit_us: int = 0
    cache_miss_us: int = 0


@dataclass
class EmbeddedKvCosts:
    per_call_overhead_us: int = 0
    per_doc_write_us: int = 8


class StateDb:
    """Timing model for one state database. Peers with identical statedb
    configuration may share an instance: every peer applies the same
    blocks in the same order, so the tree evolution (and therefore the
    per-block cost) is identical across them. Batch costs are memoized by
    block number for that reason."""

    def __init__(self, backend: str, chunk_size_bytes: int = 1279,
                 doc_store_costs: DocStoreCosts | None = None,
                 embedded_costs: EmbeddedKvCosts | None = None,
                 cache_entries: int = 1):
        if backend not in ("doc_store", "embedded_kv"):
            raise ValueError(f"unknown statedb backend {backend!r}")
        self.backend = backend
        self.doc_costs = doc_store_costs or DocStoreCosts()
        self.kv_costs = embedded_costs or EmbeddedKvCosts()
        self.tree = AppendOnlyBTree(chunk_size_bytes, cache_entries) \
            if backend == "doc_store" else None
        self.doc_count = 0
        self._block_cache: dict[int, int] = {}

    @property
    def call_overhead_us(self) -> int:
        if self.backend == "doc_store":
            return self.doc_costs.per_call_overhead_us
        return self.kv_costs.per_call_overhead_us

    def batch_update(self, doc_ids: list[str]) -> int:
        """Apply a batch of document writes; returns modeled service time."""
        if self.backend == "embedded_kv":
            self.doc_count += len(doc_ids)
            return self.kv_costs.per_doc_write_us * len(doc_ids)
        costs = self.doc_costs
        total = costs.per_call_overhead_us
        tree = self.tree
        for doc_id in doc_ids:
            st = tree.insert(doc_id, self.doc_count)
            self.doc_count += 1
            total += (costs.per_doc_write_us
                      + st.nodes_written * costs.per_node_append_us
                      + (costs.cache_hit_us if st.leaf_cache_hit
                         else costs.cache_miss_us))
        return total

    def prefill(self, count: int) -> None:
        """Seed the database with ``count`` documents before a run starts.
        Pre-existing data is modeled as already on disk, so the tree is
        bulk-loaded bottom-up and the write counters are reset afterwards:
        run statistics reflect run activity only."""
        if count <= 0:
            return
        self.doc_count += count
        tree = self.tree
        if tree is None:
            return
        if tree.size:
            raise SimulationError("prefill requires an empty tree")
        entries = [(f"{i:032d}", i) for i in range(count)]
        level = [(chunk[-1][0], tree._append_node(("L", chunk), csize))
                 for chunk, csize in _chunkify(entries, tree.chunk)]
        tree.depth = 1
        while len(level) > 1:
            level = [(chunk[-1][0], tree._append_node(("I", chunk), csize))
                     for chunk, csize in _chunkify(level, tree.chunk, 2)]
            tree.depth += 1
        tree.root = level[0][1]
        tree.size = count
        tree.inserts = 0
        tree.nodes_written = 0
        tree.bytes_appended = 0

    def batch_update_block(self, block_num: int, doc_ids: list[str]) -> int:
        cached = self._block_cache.get(block_num)
        if cached is None:
            cached = self._block_cache[block_num] = self.batch_update(doc_ids)
        return cached

    def tree_stats(self) -> dict | None:
        return self.tree.stats() if self.tree is not None else None
