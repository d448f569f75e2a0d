"""B+-tree operations against a reference dict, plus commutativity and undo laws."""

import pytest
from hypothesis import given, settings, strategies as st

from tccstore import Engine
from tccstore.btree import (BTree, Node, TreeFormatError, TreeFullError, LEAF, INNER,
                            encode_kv, inner_capacity, leaf_capacity, logical_state, validate)

keys = st.integers(0, 200)
ops = st.lists(st.one_of(
    st.tuples(st.just("insert"), keys, st.integers(0, 2**64 - 1)),
    st.tuples(st.just("delete"), keys),
    st.tuples(st.just("lookup"), keys),
    st.tuples(st.just("scan"), keys, st.integers(0, 40)),
), max_size=80)


def new_tree(max_keys=4, capacity=512, **kw):
    e = Engine(capacity=capacity, block_size=256, **kw)
    t = BTree(e, max_keys=max_keys)
    t.create()
    return e, t


def run_ops(tree, seq, ref):
    e = tree.engine
    tx = e.begin_tx()
    for op in seq:
        kind, k = op[0], op[1]
        if kind == "insert":
            got = tree.insert(tx, k, op[2]).value
            assert got == (k not in ref)
            ref.setdefault(k, op[2])
        elif kind == "delete":
            assert tree.delete(tx, k).value == (k in ref)
            ref.pop(k, None)
        elif kind == "lookup":
            assert tree.lookup(tx, k).value == ref.get(k)
        else:
            hi = k + op[2]
            assert tree.scan(tx, k, hi).value == sorted((x, v) for x, v in ref.items() if k <= x <= hi)
    assert e.end_tx(tx)


@settings(max_examples=80, deadline=None)
@given(ops)
def test_matches_reference_map(seq):
    e, t = new_tree()
    ref = {}
    run_ops(t, seq, ref)
    assert logical_state(e.store) == ref
    assert validate(e.store, 4, 4) == []


def test_sequential_growth_and_sizing():
    e, t = new_tree(max_keys=4)
    tx = e.begin_tx()
    for k in range(300):
        assert t.insert(tx, k, k * 2).value is True
    e.end_tx(tx)
    state = logical_state(e.store)
    assert state == {k: 2 * k for k in range(300)}
    assert validate(e.store, 4, 4) == []
    # default sizing fills the block
    assert leaf_capacity(256) == 15 and inner_capacity(256) == 20
    assert Node.decode(Node(LEAF, [1], [2]).encode(64)).keys == [1]


def test_node_codec_roundtrip_and_overflow():
    inner = Node(INNER, [10, 20], [], [3, 4, 5])
    assert Node.decode(inner.encode(64)) == inner
    with pytest.raises(TreeFormatError):
        Node(LEAF, list(range(10)), list(range(10))).encode(64)
    with pytest.raises(TreeFormatError):
        Node.decode(b"\x07" + bytes(63))


def test_full_store_raises():
    e, t = new_tree(capacity=6)
    tx = e.begin_tx()
    with pytest.raises(TreeFullError):
        for k in range(100):
            t.insert(tx, k, k)


def test_validator_flags_unsorted_leaf():
    e, t = new_tree()
    tx = e.begin_tx()
    for k in (1, 2, 3):
        t.insert(tx, k, k)
    e.end_tx(tx)
    e.store.write(1, Node(LEAF, [3, 1, 2], [3, 1, 2]).encode(256))
    assert validate(e.store, 4, 4)


@settings(max_examples=60, deadline=None)
@given(st.sets(keys, max_size=30), keys, keys, st.integers(0, 99), st.integers(0, 99))
def test_distinct_key_inserts_commute(base, k1, k2, v1, v2):
    """Swapping two distinct-key inserts changes neither results nor final state."""
    if k1 == k2:
        return
    outcomes = []
    for order in ((k1, v1), (k2, v2)), ((k2, v2), (k1, v1)):
        e, t = new_tree()
        tx = e.begin_tx()
        for k in sorted(base):
            t.insert(tx, k, 0)
        results = {k: t.insert(tx, k, v).value for k, v in order}
        e.end_tx(tx)
        outcomes.append((results, logical_state(e.store)))
    assert outcomes[0] == outcomes[1]
    e, t = new_tree()
    assert e.registry.is_commutative(t.ops["btreeInsert"], encode_kv(k1, 1),
                                     t.ops["btreeInsert"], encode_kv(k2, 2))
    assert not e.registry.is_commutative(t.ops["btreeInsert"], encode_kv(k1, 1),
                                         t.ops["btreeInsert"], encode_kv(k1, 2))


@settings(max_examples=60, deadline=None)
@given(st.sets(keys, max_size=40), keys)
def test_delete_cancels_insert(base, k):
    e, t = new_tree()
    tx = e.begin_tx()
    for x in sorted(base):
        t.insert(tx, x, x)
    before = logical_state(e.store)
    if k not in base:
        assert t.insert(tx, k, 7).value
        assert t.delete(tx, k).value
    assert logical_state(e.store) == before
    e.end_tx(tx)
    assert validate(e.store, 4, 4) == []


@pytest.mark.parametrize("mode", ["basic", "extended"])
def test_abort_restores_key_map(mode):
    e, t = new_tree(scheduler_mode=mode)
    tx = e.begin_tx()
    for k in range(0, 40, 3):
        t.insert(tx, k, k)
    e.end_tx(tx)
    before = logical_state(e.store)
    tx = e.begin_tx()
    for k in range(1, 40, 3):  # enough to split several leaves
        t.insert(tx, k, k)
    t.delete(tx, 0)
    e.abort_tx(tx)
    assert logical_state(e.store) == before
    assert validate(e.store, 4, 4) == []
