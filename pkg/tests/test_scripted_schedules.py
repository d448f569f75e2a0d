"""Deterministic interleavings driven through the lock-phase hook."""

import time

import pytest

from tccstore import AbortReason, TxAborted, TxStatus
from tccstore.oracle import build_graph, check_conflict_serializable
from helpers import Gate, blocks_arg, counter_engine, run_in_thread

P, Q = 5, 9


def test_late_lock_after_earlier_latch_is_aborted_and_counters_drain():
    e = counter_engine()
    a, b = e.begin_tx(), e.begin_tx()
    gate = Gate(e, a)
    join_a = run_in_thread(e.execute, a, "get", blocks_arg(P))
    assert gate.arrived.wait(5)
    # a holds slot 0 on P but has not locked; b latched P after it
    with pytest.raises(TxAborted) as info:
        e.execute(b, "bump", blocks_arg(P))
    assert info.value.reason is AbortReason.COUNTER_GAP
    assert e.stats.counter_gap_aborts == 1
    latch, lock, incre = e.counters(P)
    assert (latch, lock, incre) == (2, 0, [1])
    gate.release.set()
    assert join_a().value == [0]
    assert e.counters(P) == (2, 2, [])
    assert e.end_tx(a)
    assert e.tx_status(b) is TxStatus.ABORTED
    assert e.end_tx(b) is False
    assert e.store.read(P)[:8] == bytes(8)


def test_cross_upgrade_deadlock_has_one_victim_and_survivor_commits():
    e = counter_engine(detector_period=0.05)
    t1, t2 = e.begin_tx(), e.begin_tx()
    e.execute(t1, "get", blocks_arg(P))
    e.execute(t2, "get", blocks_arg(Q))
    join_1 = run_in_thread(e.execute, t1, "bump", blocks_arg(Q))
    deadline = time.time() + 5
    while not e.txs.is_waiting(t1):
        assert time.time() < deadline
        time.sleep(0.001)
    started = time.perf_counter()
    with pytest.raises(TxAborted) as info:
        e.execute(t2, "bump", blocks_arg(P))
    assert time.perf_counter() - started < e.config.detector_period + 0.5
    assert info.value.reason is AbortReason.DEADLOCK
    assert join_1().value == [1]
    assert e.end_tx(t1)
    assert e.end_tx(t2) is False
    assert e.stats.deadlock_victims == 1
    assert e.stats.latch_held_at_lock_phase == 0


def _lost_order_schedule(engine):
    t1, t2 = engine.begin_tx(), engine.begin_tx()
    gate = Gate(engine, t1, op_id=1)
    join_1 = run_in_thread(engine.execute, t1, "get", blocks_arg(P))
    assert gate.arrived.wait(5)
    try:
        engine.execute(t2, "touch", blocks_arg(P, Q))
        engine.end_tx(t2)
    except TxAborted:
        pass
    gate.release.set()
    join_1()
    engine.execute(t1, "get", blocks_arg(Q))
    engine.end_tx(t1)
    return build_graph(engine.log.events(), engine)


def test_counter_check_prevents_cycle():
    g = _lost_order_schedule(counter_engine())
    assert check_conflict_serializable(g).ok


def test_disabling_counter_check_lets_a_cycle_through():
    e = counter_engine()
    e.txs.skip_counter_check = True
    verdict = check_conflict_serializable(_lost_order_schedule(e))
    assert not verdict.ok
    assert set(verdict.cycle) == {1, 2}
