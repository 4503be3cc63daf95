import pytest

from ledgersim.engine import SimulationError
from ledgersim.statedb import (ENTRY_STUB_BYTES, NODE_HEADER_BYTES,
                               AppendOnlyBTree, DocStoreCosts,
                               EmbeddedKvCosts, RwLock, StateDb, _chunkify)

KEYS = [f"{i:022d}" for i in range(64)]


def test_node_size_constants():
    assert NODE_HEADER_BYTES == 32
    assert ENTRY_STUB_BYTES == 16


def test_chunkify_single_chunk_when_under_budget():
    entries = [(KEYS[i], i) for i in range(2)]
    assert _chunkify(entries, 108) == [(entries, 108)]


def test_chunkify_greedy_split():
    entries = [(KEYS[i], i) for i in range(3)]
    chunks = _chunkify(entries, 108)
    assert [(len(c), size) for c, size in chunks] == [(2, 108), (1, 70)]


def test_chunkify_default_budget_packs_32_entries():
    entries = [(KEYS[i], i) for i in range(33)]
    chunks = _chunkify(entries, 1279)
    assert [(len(c), size) for c, size in chunks] == [(32, 1248), (1, 70)]


def test_chunkify_empty_and_oversized():
    assert _chunkify([], 1279) == []
    oversized = [("x" * 2000, 0)]
    assert _chunkify(oversized, 100) == [(oversized, 2048)]


def test_btree_rejects_tiny_chunk():
    with pytest.raises(ValueError):
        AppendOnlyBTree(chunk_size_bytes=32)


def test_btree_root_leaf_rewrites_until_split():
    tree = AppendOnlyBTree(1279)
    for i in range(32):
        tree.insert(KEYS[i], i)
    assert tree.nodes_written == 32
    assert tree.depth == 1
    stats = tree.insert(KEYS[32], 32)
    # split into two leaves plus a fresh root
    assert stats.nodes_written == 3
    assert stats.bytes_appended == 1426
    assert tree.nodes_written == 35
    assert tree.depth == 2
    assert tree.leaf_depths() == {2}


def test_btree_get_and_items():
    tree = AppendOnlyBTree(1279)
    for i in range(33):
        tree.insert(KEYS[i], i)
    assert tree.get(KEYS[5]) == 5
    assert tree.get("missing") is None
    assert [k for k, _ in tree.items()] == sorted(KEYS[:33])


def test_btree_update_in_place():
    tree = AppendOnlyBTree(1279)
    tree.insert("a", 1)
    tree.insert("a", 2)
    assert (tree.inserts, tree.updates, tree.size) == (1, 1, 1)
    assert tree.get("a") == 2


def test_btree_checksums_track_every_node():
    tree = AppendOnlyBTree(1279)
    for i in range(40):
        tree.insert(KEYS[i], i)
    assert len(tree.checksums) == len(tree.nodes)
    assert tree.verify_integrity()


def test_btree_stats_dict():
    tree = AppendOnlyBTree(1279)
    for i in range(33):
        tree.insert(KEYS[i], i)
    stats = tree.stats()
    assert stats["inserts"] == 33
    assert stats["updates"] == 0
    assert stats["nodes_written"] == 35
    assert stats["depth"] == 2


def test_rwlock_shared_is_immediate_when_free():
    lock = RwLock()
    log = []
    lock.acquire_shared("s1", log.append, "s1")
    assert log == ["s1"]


def test_rwlock_fifo_with_reader_coalescing():
    lock = RwLock()
    log = []
    lock.acquire_shared("s1", log.append, "s1")
    lock.acquire_exclusive("x1", log.append, "x1")
    lock.acquire_shared("s2", log.append, "s2")
    lock.acquire_shared("s3", log.append, "s3")
    assert log == ["s1"]            # readers behind a writer must wait
    lock.release_shared("s1")
    assert log == ["s1", "x1"]
    lock.release_exclusive("x1")
    assert log == ["s1", "x1", "s2", "s3"]   # reader run granted together


def test_rwlock_double_acquire_raises():
    lock = RwLock()
    lock.acquire_shared("s1", lambda a: None, None)
    with pytest.raises(SimulationError):
        lock.acquire_shared("s1", lambda a: None, None)


def test_rwlock_wrong_owner_release_raises():
    lock = RwLock()
    lock.acquire_exclusive("x1", lambda a: None, None)
    with pytest.raises(SimulationError):
        lock.release_exclusive("x2")


def test_statedb_unknown_backend():
    with pytest.raises(ValueError):
        StateDb("graph_store")


def test_embedded_kv_batch_cost_is_linear():
    db = StateDb("embedded_kv",
                 embedded_costs=EmbeddedKvCosts(per_call_overhead_us=0,
                                                per_doc_write_us=8))
    assert db.batch_update(["a", "b", "c"]) == 24
    assert db.doc_count == 3
    assert db.call_overhead_us == 0
    assert db.tree_stats() is None


def test_doc_store_batch_cost_counts_node_appends():
    db = StateDb("doc_store")    # 3000 overhead, 8/doc, 25/node
    assert db.batch_update([KEYS[0], KEYS[1]]) == 3066


def test_doc_store_leaf_cache_hit_pricing():
    costs = DocStoreCosts(per_call_overhead_us=3000, per_doc_write_us=8,
                          per_node_append_us=25, cache_hit_us=2,
                          cache_miss_us=10)
    db = StateDb("doc_store", doc_store_costs=costs)
    # first write misses the leaf cache, the second hits the same leaf
    assert db.batch_update([KEYS[0], KEYS[1]]) == 3078


def test_batch_update_block_is_memoized():
    db = StateDb("doc_store")
    first = db.batch_update_block(5, [KEYS[0]])
    count = db.doc_count
    assert db.batch_update_block(5, [KEYS[0]]) == first
    assert db.doc_count == count    # replay must not re-apply writes


def test_prefill_bulk_loads_and_resets_counters():
    db = StateDb("doc_store")
    db.prefill(100)
    assert db.doc_count == 100
    assert db.tree.size == 100
    assert db.tree.nodes_written == 0
    assert db.tree.inserts == 0
    assert db.tree.get(f"{7:032d}") == 7
    assert len(db.tree.leaf_depths()) == 1


def test_prefill_requires_empty_tree():
    db = StateDb("doc_store")
    db.batch_update([KEYS[0]])
    with pytest.raises(SimulationError):
        db.prefill(10)
