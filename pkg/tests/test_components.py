"""Store, semantics registry, per-block counters and the schedule log format."""

import pytest
from hypothesis import given, strategies as st

from tccstore import BlockRangeError, BlockStore, EventKind, RegistrationError, ScheduleLog, parse_log
from tccstore.blockmeta import BlockMeta, MetaTable
from tccstore.schedlog import LogParseError, ScheduleEvent
from tccstore.semantics import OpSem, SemanticsRegistry
from tccstore.store import Workspace


# -- block store ---------------------------------------------------------------

def test_store_pads_and_rejects_oversize_images():
    s = BlockStore(4, 64)
    assert s.read(3) == bytes(64)
    s.write(1, b"abc")
    assert s.read(1) == b"abc" + bytes(61)
    with pytest.raises(ValueError):
        s.write(1, bytes(65))


@pytest.mark.parametrize("block", [-1, 4, 100])
def test_store_range_errors(block):
    s = BlockStore(4, 64)
    with pytest.raises(BlockRangeError):
        s.read(block)
    with pytest.raises(IndexError):  # BlockRangeError is also an IndexError
        s.write(block, b"")


def test_store_rejects_bad_geometry():
    with pytest.raises(ValueError):
        BlockStore(0, 64)
    with pytest.raises(ValueError):
        BlockStore(4, 32)


def test_snapshot_is_independent_and_load_checks_capacity():
    s = BlockStore(3, 64)
    snap = s.snapshot()
    s.write(0, b"x")
    assert snap[0] == bytes(64)
    s.load(snap)
    assert s.read(0) == bytes(64)
    with pytest.raises(ValueError):
        s.load(snap[:2])


def test_workspace_keeps_first_before_image():
    s = BlockStore(2, 64)
    ws = Workspace(owner=(1, 1))
    ws.put(0, s.coerce(b"a"), s.read(0))
    ws.put(0, s.coerce(b"b"), s.coerce(b"a"))
    assert ws.before_images[0] == bytes(64)
    s.publish(ws)
    assert s.read(0)[:1] == b"b"
    s.restore(ws.before_images)
    assert s.read(0) == bytes(64)


# -- semantics -------------------------------------------------------------------

def test_commutativity_is_symmetric_with_relation():
    reg = SemanticsRegistry()
    reg.add_commutativity(1, None, 2, None, relation=lambda a, b: a[0] < b[0])
    assert reg.is_commutative(1, b"\x01", 2, b"\x05")
    assert not reg.is_commutative(1, b"\x05", 2, b"\x01")
    # the swapped pair sees its arguments in the declared order
    assert reg.is_commutative(2, b"\x05", 1, b"\x01")
    assert not reg.commutes(OpSem(2, b"\x01"), OpSem(1, b"\x05"))


def test_matchers_literal_and_predicate():
    reg = SemanticsRegistry()
    reg.add_commutativity(1, b"ab", 1, lambda a: a.startswith(b"z"))
    assert reg.is_commutative(1, b"ab", 1, b"zz")
    assert reg.is_commutative(1, b"zz", 1, b"ab")
    assert not reg.is_commutative(1, b"ab", 1, b"ab")
    assert not reg.is_commutative(1, b"xx", 3, b"zz")


def test_inverse_lookup_and_unknown_types():
    reg = SemanticsRegistry(known_types=lambda t: t in (1, 2))
    reg.add_inverse(1, lambda a: a[:1], 2)
    assert reg.has_inverse(1) and not reg.has_inverse(2)
    assert reg.inverse_of(1, b"kv") == (2, b"k")
    assert reg.inverse_of(2, b"k") is None
    with pytest.raises(RegistrationError):
        reg.add_inverse(1, None, 9)
    with pytest.raises(RegistrationError):
        reg.add_commutativity(9, None, 1, None)


# -- counters ----------------------------------------------------------------------

@given(st.permutations(range(12)))
def test_slots_retired_in_any_order_drain_completely(order):
    meta = BlockMeta()
    meta.latchcount = 12
    for slot in order:
        meta.consume_slot(slot)
        assert meta.lockcount not in meta.incre
        assert all(s > meta.lockcount for s in meta.incre)
    assert meta.lockcount == meta.latchcount
    assert not meta.incre


def test_meta_table_is_lazy():
    t = MetaTable(8)
    assert t.peek(3) is None
    m = t[3]
    assert t[3] is m and t.peek(3) is m
    assert [b for b, _ in t.items()] == [3]


# -- log format ----------------------------------------------------------------------

_events = st.builds(
    ScheduleEvent,
    st.sampled_from(list(EventKind)),
    st.integers(0, 10**6),
    st.none() | st.integers(0, 1000),
    st.none() | st.integers(0, 1 << 20),
    st.none() | st.sampled_from(["R", "W", "S", "X"]),
    st.none() | st.integers(0, 10**6),
    st.dictionaries(st.sampled_from(["op", "args", "outcome", "reason", "inverse"]),
                    st.text("abcdef0123456789_", min_size=1, max_size=12), max_size=3),
)


@given(st.lists(_events, max_size=20))
def test_log_text_round_trips(events):
    log = ScheduleLog()
    for ev in events:
        log.append(ev.kind, ev.tx_id, ev.op_id, ev.block, ev.mode, ev.latchcount, **ev.extra)
    back = parse_log(log.to_text())
    assert back == events
    assert [e.extra for e in back] == [e.extra for e in events]


@pytest.mark.parametrize("line", [
    "1 2 BeginOp",
    "1 2 Frobnicate - - -",
    "x 2 BeginOp - - -",
    "1 2 BeginOp - - - novalue",
])
def test_malformed_lines_are_rejected(line):
    with pytest.raises(LogParseError):
        parse_log(line)


def test_disabled_log_records_nothing(tmp_path):
    log = ScheduleLog(enabled=False)
    log.append(EventKind.BEGIN_TX, 1)
    assert len(log) == 0
    on = ScheduleLog()
    on.append(EventKind.COMMIT, 4)
    path = tmp_path / "log.txt"
    on.dump(path)
    assert path.read_text() == "4 - Commit - - -\n"
