from hypothesis import given, settings
from hypothesis import strategies as st

from ledgersim.statedb import AppendOnlyBTree

keys = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789", min_size=1,
               max_size=40)
ops = st.lists(st.tuples(keys, st.integers(0, 2**31)), min_size=1,
               max_size=120)
chunks = st.sampled_from([64, 128, 1279, 4096])


@given(ops, chunks)
def test_tree_matches_sorted_map(operations, chunk):
    tree = AppendOnlyBTree(chunk)
    oracle = {}
    for key, value in operations:
        tree.insert(key, value)
        oracle[key] = value
    assert list(tree.items()) == sorted(oracle.items())
    assert tree.size == len(oracle)
    for key, value in oracle.items():
        assert tree.get(key) == value


@given(ops, chunks)
def test_leaves_stay_at_equal_depth(operations, chunk):
    tree = AppendOnlyBTree(chunk)
    for key, value in operations:
        tree.insert(key, value)
    assert len(tree.leaf_depths()) == 1


@given(ops, chunks)
def test_appends_never_rewrite_history(operations, chunk):
    tree = AppendOnlyBTree(chunk)
    half = len(operations) // 2
    for key, value in operations[:half]:
        tree.insert(key, value)
    snapshot = [repr(n) for n in tree.nodes]
    checksums = list(tree.checksums)
    for key, value in operations[half:]:
        tree.insert(key, value)
    assert [repr(n) for n in tree.nodes[:len(snapshot)]] == snapshot
    assert tree.checksums[:len(checksums)] == checksums
    assert tree.verify_integrity()


@given(ops, chunks)
def test_node_sizes_respect_budget(operations, chunk):
    tree = AppendOnlyBTree(chunk)
    for key, value in operations:
        tree.insert(key, value)
    for ref in range(len(tree.nodes)):
        kind, entries = tree.nodes[ref]
        # a node over budget is only legal when a single entry overflows
        if tree.node_size_bytes(ref) > chunk:
            assert len(entries) == 1


@settings(max_examples=25)
@given(st.integers(1, 400), chunks)
def test_ascending_keys_fill_leaves_densely(count, chunk):
    tree = AppendOnlyBTree(chunk)
    for i in range(count):
        tree.insert(f"{i:022d}", i)
    assert tree.size == count
    assert [k for k, _ in tree.items()] == [f"{i:022d}" for i in range(count)]
