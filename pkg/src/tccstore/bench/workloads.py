"""Workload definitions for the bench driver.

A workload prepares a shared engine once (``setup``) and then hands each
worker a stream of transactions, each a list of ``(op_name, args)`` pairs
(``next_txn``).  Per-worker randomness comes from the ``random.Random``
passed in, so a single-worker run with a fixed seed is fully reproducible.
"""

import hashlib
import itertools
import struct

from ..btree import BTree, encode_kv

_U64 = struct.Struct(">Q")
_ROUTE = struct.Struct(">BQ")
_UPDATE = struct.Struct(">II")  # first record, record count


class Workload:
    name = ""
    max_keys = None

    def __init__(self, ops_per_txn=None, **options):
        self.ops_per_txn = ops_per_txn or self.default_ops
        self.options = options

    default_ops = 1

    def capacity(self, block_size):
        return 1 << 16

    def setup(self, engine, rng):
        raise NotImplementedError

    def next_txn(self, rng, worker):
        raise NotImplementedError


class _BTreeWorkload(Workload):
    preload = 0

    def capacity(self, block_size):
        return 1 << 15

    def setup(self, engine, rng):
        self.tree = BTree(engine, max_keys=self.max_keys,
                          leaf_for_update=self.options.get("leaf_for_update", True))
        self.tree.create()
        if self.preload:
            keys = rng.sample(range(1 << 40), self.preload)
            for i in range(0, len(keys), 64):
                tx = engine.begin_tx()
                for k in keys[i:i + 64]:
                    engine.execute(tx, "btreeInsert", encode_kv(k, k))
                engine.end_tx(tx)


class BTreeRandom(_BTreeWorkload):
    """Single-insert transactions on uniformly random keys."""

    name = "btree-random"
    preload = 2000

    def next_txn(self, rng, worker):
        return [("btreeInsert", encode_kv(rng.randrange(1 << 40), worker))
                for _ in range(self.ops_per_txn)]


class BTreeSequential(_BTreeWorkload):
    """Inserts of globally increasing keys: every worker hits the last leaf."""

    name = "btree-sequential"

    def setup(self, engine, rng):
        super().setup(engine, rng)
        self._keys = itertools.count(1)

    def next_txn(self, rng, worker):
        return [("btreeInsert", encode_kv(next(self._keys), worker))
                for _ in range(self.ops_per_txn)]


class ShortTxn(BTreeSequential):
    """Two same-leaf inserts per transaction."""

    name = "short-txn"
    default_ops = 2


class LongTxn(BTreeSequential):
    name = "long-txn"
    default_ops = 8


class CornerCase(Workload):
    """Two mirrored routes: read one hot block, scatter reads, then update the other.

    Route 0 reads block A first and updates B last; route 1 reads B and updates
    A.  Concurrent opposite routes each hold a read latch the other needs to
    write, the situation a waiting latch protocol would deadlock on.
    """

    name = "corner-case"
    A, B, REGION = 1, 2, 16

    def __init__(self, ops_per_txn=None, reads=64, region=1024, **options):
        super().__init__(ops_per_txn, **options)
        self.reads = reads
        self.region = region

    def capacity(self, block_size):
        return self.REGION + self.region

    def setup(self, engine, rng):
        engine.register_operation("cornerRoute", self._route)

    def _route(self, h, args):
        route = args[0]
        first, last = (self.A, self.B) if route == 0 else (self.B, self.A)
        # the scattered block ids are a pure function of the argument bytes
        offsets = struct.unpack(f">{self.reads}I", hashlib.shake_128(args).digest(4 * self.reads))
        h.read(first)
        acc = 0
        for off in offsets:
            acc ^= h.read(self.REGION + off % self.region)[0]
        v = _U64.unpack_from(h.read(last), 0)[0]
        h.write(last, _U64.pack(v + 1))
        return acc

    def next_txn(self, rng, worker):
        return [("cornerRoute", _ROUTE.pack(rng.randrange(2), rng.getrandbits(63)))
                for _ in range(self.ops_per_txn)]


class MixedOps(Workload):
    """Read-modify-write updates over a record table, one record per block.

    Every update also reads a shared header block (the highest block id, so
    it is locked last).  A long update keeps its header slot pending while it
    locks its records, and short updates that latched the header after it
    but lock sooner are aborted for locking out of latch order.
    """

    name = "mixed-ops"

    def __init__(self, ops_per_txn=None, records=4096, long_size=100, long_fraction=0.5,
                 **options):
        super().__init__(ops_per_txn, **options)
        self.records = records
        self.long_size = long_size
        self.long_fraction = long_fraction
        self.header = records + 1

    def capacity(self, block_size):
        return self.records + 2

    def setup(self, engine, rng):
        engine.register_operation("updateRecords", self._update)

    def _update(self, h, args):
        first, count = _UPDATE.unpack(args)
        h.read(self.header)
        total = 0
        for i in range(count):
            b = 1 + (first + i) % self.records
            v = _U64.unpack_from(h.read(b, for_update=True), 0)[0] + 1
            h.write(b, _U64.pack(v))
            total += v
        return total

    def next_txn(self, rng, worker):
        ops = []
        for _ in range(self.ops_per_txn):
            count = self.long_size if rng.random() < self.long_fraction else 1
            ops.append(("updateRecords", _UPDATE.pack(rng.randrange(self.records), count)))
        return ops


class UniformOps(MixedOps):
    """The record-table workload with single-record updates only."""

    name = "uniform-ops"

    def __init__(self, ops_per_txn=None, **options):
        options["long_fraction"] = 0.0
        super().__init__(ops_per_txn, **options)


WORKLOADS = {w.name: w for w in (BTreeRandom, BTreeSequential, CornerCase, ShortTxn,
                                 LongTxn, MixedOps, UniformOps)}
