"""Multi-worker bench driver and the oracle-checked verify runner."""

import gc
import random
import sys
import threading
import time
from dataclasses import dataclass, field

from ..btree import BTree, encode_key, encode_kv, encode_range, logical_state, validate
from ..engine import Engine, EngineConfig
from ..errors import TxAborted
from ..oracle import (EngineReplayer, TxnTrace, build_graph, check_conflict_serializable,
                      check_view_serializable, replay_equivalence)
from .workloads import WORKLOADS

CSV_HEADER = ("workload,workers,mode,throughput,abort_rate,mean_retries,max_retries,"
              "deadlocks,counter_gap_aborts")


@dataclass(frozen=True)
class BenchSpec:
    workload: str
    workers: int = 1
    duration: float = 5.0
    ops_per_txn: int = None
    scheduler_mode: str = "basic"
    seed: int = 0
    block_size: int = 4096
    log: str = "off"
    warmup: float = 1.0
    txns_per_worker: int = None  # fixed-count run instead of a timed one
    options: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.workload not in WORKLOADS and self.workload != "verify":
            raise ValueError(f"unknown workload {self.workload!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.log not in ("off", "full"):
            raise ValueError("log must be 'off' or 'full'")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")


@dataclass
class BenchReport:
    workload: str
    workers: int
    mode: str
    throughput: float = 0.0
    abort_rate: float = 0.0
    mean_retries: float = 0.0
    max_retries: int = 0
    deadlocks: int = 0
    counter_gap_aborts: int = 0
    started: int = 0
    committed: int = 0
    aborted: int = 0
    ops: int = 0
    ops_total: int = 0
    max_distinct_actions: int = 0
    progress_violations: int = 0
    unfinished_ops: int = 0
    latch_cycles: int = 0
    latch_held_at_lock_phase: int = 0
    elapsed: float = 0.0
    engine: Engine = field(default=None, repr=False)

    def csv_row(self):
        return (f"{self.workload},{self.workers},{self.mode},{self.throughput:.2f},"
                f"{self.abort_rate:.4f},{self.mean_retries:.4f},{self.max_retries},"
                f"{self.deadlocks},{self.counter_gap_aborts}")

    def summary(self):
        return (f"{self.workload} workers={self.workers} mode={self.mode}: "
                f"{self.committed} committed / {self.started} started in {self.elapsed:.1f}s "
                f"({self.throughput:.1f} tx/s), abort rate {self.abort_rate:.3f}, "
                f"{self.ops} ops measured ({self.ops_total} total), "
                f"retries mean {self.mean_retries:.3f} max {self.max_retries}, "
                f"deadlock victims {self.deadlocks}, counter-gap aborts {self.counter_gap_aborts}, "
                f"progressiveness violations {self.progress_violations}")


class _Tally:
    __slots__ = ("started", "committed", "aborted", "ops", "ops_total", "retries", "max_retries",
                 "max_distinct", "violations")

    def __init__(self):
        for name in self.__slots__:
            setattr(self, name, 0)

    def op(self, result, measured):
        self.ops_total += 1
        if not result.progressive:
            self.violations += 1
        self.max_distinct = max(self.max_distinct, result.distinct_actions)
        if measured:
            self.ops += 1
            self.retries += result.retries
            self.max_retries = max(self.max_retries, result.retries)


def make_engine(spec, workload):
    cfg = EngineConfig(block_size=spec.block_size,
                       capacity=workload.capacity(spec.block_size),
                       scheduler_mode=spec.scheduler_mode, rng_seed=spec.seed,
                       log_events=spec.log == "full")
    return Engine(cfg)


def run_bench(spec, watchdog_period=0.5):
    """Run one workload and return its :class:`BenchReport`."""
    workload = WORKLOADS[spec.workload](spec.ops_per_txn, **spec.options)
    engine = make_engine(spec, workload)
    workload.setup(engine, random.Random(spec.seed))
    engine.log.clear()

    timed = spec.txns_per_worker is None
    tallies = [_Tally() for _ in range(spec.workers)]
    in_flight = [0] * spec.workers
    stop = threading.Event()
    clock = time.perf_counter
    start = clock()
    measure_from = start + (spec.warmup if timed else 0.0)
    end_at = measure_from + spec.duration
    base = [None]

    def worker(i):
        rng = random.Random(spec.seed * 1000003 + i)
        tally = tallies[i]
        n = 0
        while not stop.is_set():
            if timed:
                if clock() >= end_at:
                    break
            elif n >= spec.txns_per_worker:
                break
            n += 1
            measured = clock() >= measure_from
            ops = workload.next_txn(rng, i)
            tx = engine.begin_tx()
            if measured:
                tally.started += 1
            ok = True
            for name, args in ops:
                in_flight[i] += 1
                try:
                    tally.op(engine.execute(tx, name, args), measured)
                except TxAborted as exc:
                    if exc.result is not None:
                        tally.op(exc.result, measured)
                    ok = False
                    break
                finally:
                    in_flight[i] -= 1
            if ok:
                ok = engine.end_tx(tx)
            if measured:
                if ok:
                    tally.committed += 1
                else:
                    tally.aborted += 1

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(spec.workers)]
    # long-lived objects (the preloaded store, the caller's heap) need not be
    # rescanned by every full collection during the run
    gc.collect()
    gc.freeze()
    prev_switch = sys.getswitchinterval()
    sys.setswitchinterval(spec.options.get("switch_interval", prev_switch))
    latch_cycles = 0
    try:
        for t in threads:
            t.start()
        while True:
            alive = [t for t in threads if t.is_alive()]
            if not alive:
                break
            now = clock()
            if base[0] is None and now >= measure_from:
                base[0] = engine.stats.snapshot()
            wait = watchdog_period if base[0] is not None else min(watchdog_period, measure_from - now)
            alive[0].join(max(wait, 0.0))
            if engine.latch_wait_cycle():
                latch_cycles += 1
        for t in threads:
            t.join()
    finally:
        stop.set()
        sys.setswitchinterval(prev_switch)
        gc.unfreeze()
    elapsed = clock() - measure_from
    before = base[0] or type(engine.stats)()
    after = engine.stats

    rep = BenchReport(spec.workload, spec.workers, spec.scheduler_mode, engine=engine)
    for t in tallies:
        rep.started += t.started
        rep.committed += t.committed
        rep.aborted += t.aborted
        rep.ops += t.ops
        rep.ops_total += t.ops_total
        rep.max_retries = max(rep.max_retries, t.max_retries)
        rep.max_distinct_actions = max(rep.max_distinct_actions, t.max_distinct)
        rep.progress_violations += t.violations
    retries = sum(t.retries for t in tallies)
    rep.elapsed = elapsed
    rep.throughput = rep.committed / elapsed if elapsed > 0 else 0.0
    rep.abort_rate = rep.aborted / rep.started if rep.started else 0.0
    rep.mean_retries = retries / rep.ops if rep.ops else 0.0
    rep.deadlocks = after.deadlock_victims - before.deadlock_victims
    rep.counter_gap_aborts = after.counter_gap_aborts - before.counter_gap_aborts
    rep.unfinished_ops = sum(in_flight)
    rep.latch_cycles = latch_cycles
    rep.latch_held_at_lock_phase = after.latch_held_at_lock_phase
    return rep


# -- verify -------------------------------------------------------------------

@dataclass
class RoundResult:
    round: int
    committed: int
    aborted: int
    conflict_ok: bool
    view_ok: bool
    replay_order: list
    structure_problems: list

    @property
    def ok(self):
        return self.view_ok and self.replay_order is not None and not self.structure_problems


@dataclass
class VerifyReport:
    mode: str
    rounds: list = field(default_factory=list)

    @property
    def passed(self):
        return sum(r.ok and (self.mode == "extended" or r.conflict_ok) for r in self.rounds)

    @property
    def failed(self):
        return len(self.rounds) - self.passed

    def summary(self):
        n = len(self.rounds)
        cs = sum(r.conflict_ok for r in self.rounds)
        vs = sum(r.view_ok for r in self.rounds)
        rp = sum(r.replay_order is not None for r in self.rounds)
        return (f"verify mode={self.mode}: {self.passed}/{n} rounds passed "
                f"(conflict-serializable {cs}/{n}, view-serializable {vs}/{n}, "
                f"replay matched {rp}/{n})")


VERIFY_BLOCK_SIZE = 256
VERIFY_CAPACITY = 512
VERIFY_MAX_KEYS = 4


def _verify_txn(rng, extended, max_ops, keyspace):
    ops = []
    for _ in range(rng.randint(1, max_ops)):
        k = rng.randrange(keyspace)
        if extended:
            ops.append(("btreeInsert", encode_kv(k, rng.randrange(1000))))
            continue
        kind = rng.choice(("insert", "insert", "delete", "lookup", "scan"))
        if kind == "insert":
            ops.append(("btreeInsert", encode_kv(k, rng.randrange(1000))))
        elif kind == "delete":
            ops.append(("btreeDelete", encode_key(k)))
        elif kind == "lookup":
            ops.append(("btreeLookup", encode_key(k)))
        else:
            ops.append(("btreeScan", encode_range(k, k + rng.randrange(8))))
    return ops


def _verify_engine(mode, preload):
    engine = Engine(block_size=VERIFY_BLOCK_SIZE, capacity=VERIFY_CAPACITY,
                    scheduler_mode=mode, detector_period=0.01)
    BTree(engine, max_keys=VERIFY_MAX_KEYS).create()
    if preload:
        tx = engine.begin_tx()
        for k in preload:
            engine.execute(tx, "btreeInsert", encode_kv(k, k))
        engine.end_tx(tx)
    return engine


def _fresh_engine(mode, image):
    engine = _verify_engine(mode, ())
    engine.store.load(image)
    return engine


def run_round(mode, rng, workers=4, max_txns=8, max_ops=4, keyspace=48,
              fault=None, txns=None, jitter=0.3):
    """One verify round: concurrent txns, then graph, replay and structure checks.

    With probability ``jitter`` an operation pauses (up to 1 ms) between
    releasing its latches and locking, widening the window in which other
    transactions can overtake it.
    """
    extended = mode == "extended"
    preload = rng.sample(range(keyspace), rng.randrange(keyspace // 4))
    engine = _verify_engine(mode, preload)
    if fault == "skip-counter-check":
        engine.txs.skip_counter_check = True
    if jitter:
        pause = random.Random(rng.getrandbits(64))

        def hook(tx_id, rec):
            if pause.random() < jitter:
                time.sleep(pause.random() * 1e-3)
        engine.lock_phase_hook = hook
    pre = engine.store.snapshot()
    engine.log.clear()
    if txns is None:
        txns = [_verify_txn(rng, extended, max_ops, keyspace)
                for _ in range(rng.randint(2, max_txns))]
    queue = list(enumerate(txns))
    qlock = threading.Lock()
    traces = {}

    def worker():
        while True:
            with qlock:
                if not queue:
                    return
                _, ops = queue.pop(0)
            tx = engine.begin_tx()
            done = []
            try:
                for name, args in ops:
                    done.append((name, args, engine.execute(tx, name, args).value))
            except TxAborted:
                continue
            if engine.end_tx(tx):
                traces[tx] = TxnTrace(tx, done)

    threads = [threading.Thread(target=worker, daemon=True) for _ in range(workers)]
    prev = sys.getswitchinterval()
    sys.setswitchinterval(1e-5)
    try:
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(prev)

    events = engine.log.events()
    graph = build_graph(events, engine)
    conflict = check_conflict_serializable(graph)
    view = check_view_serializable(graph)
    commit_order = [ev.tx_id for ev in events if ev.kind.value == "Commit"]
    final = logical_state(engine.store)

    order = replay_equivalence(list(traces.values()), final,
                               EngineReplayer(lambda: _fresh_engine(mode, pre), logical_state),
                               order_hint=commit_order)
    problems = validate(engine.store, VERIFY_MAX_KEYS, VERIFY_MAX_KEYS)
    return RoundResult(0, len(traces), len(txns) - len(traces), conflict.ok, view.ok,
                       order, problems)


def run_verify(mode="basic", rounds=100, seed=0, workers=4, fault=None, **kw):
    rng = random.Random(seed)
    report = VerifyReport(mode)
    for i in range(rounds):
        r = run_round(mode, rng, workers=workers, fault=fault, **kw)
        r.round = i
        report.rounds.append(r)
    return report


@dataclass
class RecoveryTrial:
    victim_keys: list
    committed: int
    expected: dict
    actual: dict
    structure_problems: list

    @property
    def ok(self):
        return self.actual == self.expected and not self.structure_problems


def run_recovery_trial(rng, workers=3, keyspace=48):
    """Abort one transaction after its inserts interleaved with committed ones.

    Transaction T inserts keys while other workers commit inserts of
    distinct keys into the same small tree (so leaves split under T's
    tentative entries); then T aborts.  ``expected`` is the serial replay of
    the committed transactions alone, compared to the tree's final key map.
    """
    preload = rng.sample(range(keyspace), rng.randrange(keyspace // 4))
    engine = _verify_engine("extended", preload)
    pre = engine.store.snapshot()
    free = [k for k in range(keyspace) if k not in preload]
    rng.shuffle(free)
    n_victim = rng.randint(1, 3)
    victim_keys, free = free[:n_victim], free[n_victim:]
    others = []
    while free and len(others) < rng.randint(2, 6):
        n = rng.randint(1, 3)
        others.append([("btreeInsert", encode_kv(k, rng.randrange(1000))) for k in free[:n]])
        free = free[n:]

    queue = list(others)
    qlock = threading.Lock()
    traces = {}

    def worker():
        while True:
            with qlock:
                if not queue:
                    return
                ops = queue.pop(0)
            tx = engine.begin_tx()
            done = []
            try:
                for name, args in ops:
                    done.append((name, args, engine.execute(tx, name, args).value))
            except TxAborted:
                continue
            if engine.end_tx(tx):
                traces[tx] = TxnTrace(tx, done)

    victim = engine.begin_tx()
    inserts = [encode_kv(k, rng.randrange(1000)) for k in victim_keys]
    threads = [threading.Thread(target=worker, daemon=True) for _ in range(workers)]
    prev = sys.getswitchinterval()
    sys.setswitchinterval(1e-5)
    try:
        engine.execute(victim, "btreeInsert", inserts[0])
        for t in threads:
            t.start()
        for args in inserts[1:]:
            engine.execute(victim, "btreeInsert", args)
        for t in threads:
            t.join()
    except TxAborted:
        for t in threads:
            t.join()
    finally:
        sys.setswitchinterval(prev)
    engine.abort_tx(victim)

    replayer = EngineReplayer(lambda: _fresh_engine("extended", pre), logical_state)
    for trace in sorted(traces.values(), key=lambda t: t.tx_id):
        for name, args, _ in trace.ops:
            replayer.run(name, args)
    return RecoveryTrial(victim_keys, len(traces), replayer.state(), logical_state(engine.store),
                         validate(engine.store, VERIFY_MAX_KEYS, VERIFY_MAX_KEYS))


def run_recovery(trials=100, seed=0, **kw):
    rng = random.Random(seed)
    return [run_recovery_trial(rng, **kw) for _ in range(trials)]
