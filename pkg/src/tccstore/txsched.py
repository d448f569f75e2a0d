"""Transactional scheduler: strict 2PL on blocks, applied after latches are released.

Locks are requested per operation, in ascending block order, once the
operation has published its workspace and dropped its latches.  Because the
lock phase lags the latch phase, each block carries two counters: the latch
counter hands every successful operation a slot number during clearing, and
the lock counter only advances when the slot at its head is locked.  A
transaction that obtains a lock while an earlier slot on the same block is
still outstanding has locked out of latch order and is aborted; its slot is
parked in ``incre`` and drained once the head catches up.

In extended mode, lock holders whose recorded operations all commute with the
requesting operation are treated as compatible, and uncommitted data written
by commutative, invertible, fully locked operations may be read.
"""

import enum
import itertools
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .errors import AbortReason
from .opsched import _find_cycle
from .semantics import OpSem


class LockMode(enum.Enum):
    SHARED = "S"
    EXCLUSIVE = "X"

    __hash__ = object.__hash__


S = LockMode.SHARED
X = LockMode.EXCLUSIVE


class TxStatus(enum.Enum):
    ACTIVE = "active"
    ABORTING = "aborting"
    COMMITTED = "committed"
    ABORTED = "aborted"


class _Uncommitted:
    __slots__ = ("tx_id", "op_id", "sem", "invertible", "locked", "owner")

    def __init__(self, tx_id, op_id, sem, invertible, locked, owner=None):
        self.owner = owner
        self.tx_id = tx_id
        self.op_id = op_id
        self.sem = sem
        self.invertible = invertible
        self.locked = locked


class _Holder:
    __slots__ = ("mode", "entries")

    def __init__(self, mode, entries):
        self.mode = mode
        self.entries = entries


_request_seq = itertools.count(1)


class _LockRequest:
    __slots__ = ("tx", "block", "mode", "sem", "upgrade", "seq", "event", "granted", "victim")

    def __init__(self, tx, block, mode, sem, upgrade):
        self.tx = tx
        self.block = block
        self.mode = mode
        self.sem = sem
        self.upgrade = upgrade
        self.seq = next(_request_seq)
        self.event = threading.Event()
        self.granted = False
        self.victim = False


@dataclass(eq=False)
class OpRecord:
    """A completed (published) operation in a transaction's history."""

    op_id: int
    op_type: int
    args: bytes
    sem: OpSem
    before_images: dict
    lock_modes: dict
    snapshots: dict
    entries: list = field(default_factory=list)
    lock_complete: bool = False


class TransactionContext:
    def __init__(self, tx_id):
        self.tx_id = tx_id
        self.status = TxStatus.ACTIVE
        self.held_locks = {}
        self.history = []
        self.uncommitted_blocks = set()
        self.doomed: Optional[AbortReason] = None
        self.abort_reason: Optional[AbortReason] = None
        self._op_ids = itertools.count(1)

    def next_op_id(self):
        return next(self._op_ids)

    def __repr__(self):
        return f"<Tx {self.tx_id} {self.status.value}>"


class TxScheduler:
    def __init__(self, metas, registry, mutex, stats, extended=False,
                 detector_period=0.05, on_lock=None):
        self.metas = metas
        self.registry = registry
        self.mutex = mutex
        self.stats = stats
        self.extended = extended
        self.detector_period = detector_period
        self.on_lock = on_lock
        self._waiting = {}
        self._queued_blocks = set()
        # fault injection for mutation tests: skip the latch/lock order check
        self.skip_counter_check = False
        self.locks_per_section = 64

    # -- compatibility -----------------------------------------------------

    def _conflicts(self, meta, tx_id, mode, sem):
        for h_tx, h in meta.lock_holders.items():
            if h_tx == tx_id:
                continue
            if mode is S and h.mode is S:
                continue
            if self.extended and all(self.registry.commutes(e, sem) for e in h.entries):
                continue
            yield h_tx

    def _blocked(self, meta, tx_id, mode, sem, upgrade):
        for _ in self._conflicts(meta, tx_id, mode, sem):
            return True
        if not upgrade:
            for r in meta.lock_queue:
                if r.tx.tx_id != tx_id:
                    return True
        return False

    def _grant_locked(self, meta, tx, block, mode, sem):
        h = meta.lock_holders.get(tx.tx_id)
        if h is None:
            meta.lock_holders[tx.tx_id] = _Holder(mode, [sem])
            tx.held_locks[block] = mode
        else:
            if mode is X:
                h.mode = X
            h.entries.append(sem)
            tx.held_locks[block] = h.mode

    def _grant_waiters_locked(self, meta, block):
        q = meta.lock_queue
        while q:
            r = q[0]
            if any(True for _ in self._conflicts(meta, r.tx.tx_id, r.mode, r.sem)):
                break
            q.popleft()
            self._grant_locked(meta, r.tx, block, r.mode, r.sem)
            r.granted = True
            self._waiting.pop(r.tx.tx_id, None)
            r.event.set()
        if not q:
            self._queued_blocks.discard(block)

    # -- uncommitted data --------------------------------------------------

    def uncommitted_blockers_locked(self, ctx, sem):
        """Transactions whose uncommitted writes make ``ctx``'s accesses unsafe."""
        out = set()
        metas = self.metas._metas
        for block in ctx.accessed:
            meta = metas[block]
            if meta is None or not meta.uncommitted:
                continue
            for e in meta.uncommitted:
                if e.tx_id == ctx.tx_id:
                    continue
                if (self.extended and e.locked and e.invertible
                        and self.registry.commutes(e.sem, sem)):
                    continue
                out.add(e.tx_id)
        return out

    def register_writes_locked(self, tx, ctx, sem, locked):
        invertible = self.registry.has_inverse(sem.op_type)
        written = ctx.written
        # Another transaction's tentative data read here may be copied into any
        # block this op writes (a leaf split moves keys), so its entries follow.
        inherited = []
        for block in ctx.accessed:
            meta = self.metas.peek(block)
            if meta is not None:
                inherited.extend(e for e in meta.uncommitted if e.tx_id != tx.tx_id)
        entries = []
        for block in written:
            meta = self.metas[block]
            e = _Uncommitted(tx.tx_id, ctx.op_id, sem, invertible, locked, tx)
            meta.uncommitted.append(e)
            tx.uncommitted_blocks.add(block)
            entries.append(e)
            for other in inherited:
                if other not in meta.uncommitted:
                    meta.uncommitted.append(other)
                    other.owner.uncommitted_blocks.add(block)
        return entries

    # -- locking phase -----------------------------------------------------

    def _abandon_locked(self, rec, blocks):
        for block in blocks:
            self.metas[block].consume_slot(rec.snapshots[block])

    def lock_phase(self, tx, rec):
        """Lock every block of ``rec``; return ``None`` or the reason the tx must abort."""
        with self.mutex:
            return self.lock_phase_locked(tx, rec)

    def lock_phase_locked(self, tx, rec):
        """As :meth:`lock_phase`, entered with the mutex held; waits release it."""
        blocks = sorted(rec.lock_modes)
        modes, snaps, sem = rec.lock_modes, rec.snapshots, rec.sem
        tx_id, held_locks = tx.tx_id, tx.held_locks
        metas, on_lock, per_section = self.metas._metas, self.on_lock, self.locks_per_section
        for i, block in enumerate(blocks):
            if i and i % per_section == 0:
                # bound how long one lock phase keeps the mutex from everyone else
                self.mutex.release()
                self.mutex.acquire()
            meta = metas[block]
            mode = modes[block]
            holders = meta.lock_holders
            held = holders.get(tx_id)
            if held is None:
                if not meta.lock_queue and (not holders or (
                        mode is S and all(h.mode is S for h in holders.values()))):
                    holders[tx_id] = _Holder(mode, [sem])
                    held_locks[block] = mode
                elif not self._wait_for_lock_locked(meta, tx, block, mode, sem, False):
                    self._abandon_locked(rec, blocks[i:])
                    return AbortReason.DEADLOCK
            elif held.mode is X or mode is S:
                held.entries.append(sem)
            elif not self._wait_for_lock_locked(meta, tx, block, mode, sem, True):
                self._abandon_locked(rec, blocks[i:])
                return AbortReason.DEADLOCK
            if on_lock is not None:
                on_lock(tx_id, rec.op_id, block, held_locks[block])
            snap = snaps[block]
            count = meta.lockcount
            if snap == count and not meta.incre:
                meta.lockcount = count + 1
            elif snap > count and not self.skip_counter_check:
                self.stats.counter_gap_aborts += 1
                self._abandon_locked(rec, blocks[i:])
                return AbortReason.COUNTER_GAP
            elif snap >= count and snap not in meta.incre:
                meta.consume_slot(snap)
            # otherwise: a stale slot, only reachable with the counter check disabled
        for e in rec.entries:
            e.locked = True
        rec.lock_complete = True
        return None

    def _wait_for_lock_locked(self, meta, tx, block, mode, sem, upgrade):
        """Grant or queue a contended request; ``False`` if it was picked as deadlock victim."""
        if not self._blocked(meta, tx.tx_id, mode, sem, upgrade):
            self._grant_locked(meta, tx, block, mode, sem)
            return True
        req = self._enqueue_locked(meta, tx, block, mode, sem, upgrade)
        if self._reaches_locked(tx.tx_id):
            self._victimize_locked(req)
        while not (req.granted or req.victim):
            self.mutex.release()
            try:
                req.event.wait(self.detector_period)
            finally:
                self.mutex.acquire()
            if not (req.granted or req.victim):
                self.detect_deadlocks_locked()
        return not req.victim

    def _enqueue_locked(self, meta, tx, block, mode, sem, upgrade):
        req = _LockRequest(tx, block, mode, sem, upgrade)
        q = meta.lock_queue
        if upgrade:
            idx = 0
            while idx < len(q) and q[idx].upgrade:
                idx += 1
            q.insert(idx, req)
        else:
            q.append(req)
        self._queued_blocks.add(block)
        self._waiting[tx.tx_id] = req
        self.stats.lock_waits += 1
        return req

    def _victimize_locked(self, req):
        meta = self.metas[req.block]
        try:
            meta.lock_queue.remove(req)
        except ValueError:
            pass
        req.victim = True
        self._waiting.pop(req.tx.tx_id, None)
        self.stats.deadlock_victims += 1
        req.event.set()
        self._grant_waiters_locked(meta, req.block)

    # -- deadlock detection ------------------------------------------------

    def waits_for_locked(self):
        edges = defaultdict(set)
        for block in self._queued_blocks:
            meta = self.metas[block]
            ahead = []
            for r in meta.lock_queue:
                me = r.tx.tx_id
                edges[me].update(self._conflicts(meta, me, r.mode, r.sem))
                if not r.upgrade:
                    edges[me].update(a for a in ahead if a != me)
                ahead.append(me)
        return edges

    def _reaches_locked(self, start):
        edges = self.waits_for_locked()
        seen = set()
        stack = list(edges.get(start, ()))
        while stack:
            node = stack.pop()
            if node == start:
                return True
            if node in seen:
                continue
            seen.add(node)
            stack.extend(edges.get(node, ()))
        return False

    def detect_deadlocks_locked(self):
        victims = set()
        while True:
            cycle = _find_cycle(self.waits_for_locked())
            if not cycle:
                return victims
            waiting = [t for t in cycle if t in self._waiting]
            # the most recent enqueue is the one that closed the cycle
            victim = max(waiting, key=lambda t: self._waiting[t].seq)
            self._victimize_locked(self._waiting[victim])
            victims.add(victim)

    def detect_deadlocks(self):
        with self.mutex:
            return self.detect_deadlocks_locked()

    def victimize_waiting_locked(self, tx_ids):
        for t in tx_ids:
            req = self._waiting.get(t)
            if req is not None:
                self._victimize_locked(req)

    def is_waiting(self, tx_id):
        return tx_id in self._waiting

    # -- inverse operations ------------------------------------------------

    def inverse_blockers_locked(self, tx, ctx, lock_modes):
        out = self.uncommitted_blockers_locked(ctx, ctx.sem)
        for block, mode in lock_modes.items():
            meta = self.metas[block]
            held = meta.lock_holders.get(tx.tx_id)
            if held is not None and (held.mode is X or mode is S):
                continue
            out.update(self._conflicts(meta, tx.tx_id, mode, ctx.sem))
        return out

    def inverse_lock_locked(self, tx, rec):
        """Grant an inverse operation's locks at once; its slots retire without order checks."""
        for block in sorted(rec.lock_modes):
            meta = self.metas[block]
            self._grant_locked(meta, tx, block, rec.lock_modes[block], rec.sem)
            if self.on_lock is not None:
                self.on_lock(tx.tx_id, rec.op_id, block, tx.held_locks[block])
            meta.consume_slot(rec.snapshots[block])
        rec.lock_complete = True

    # -- transaction end ---------------------------------------------------

    def release_all_locked(self, tx):
        tx_id = tx.tx_id
        for block in tx.uncommitted_blocks:
            meta = self.metas[block]
            meta.uncommitted = [e for e in meta.uncommitted if e.tx_id != tx_id]
        tx.uncommitted_blocks = set()
        metas = self.metas._metas
        for block in tx.held_locks:
            meta = metas[block]
            del meta.lock_holders[tx_id]
            if meta.lock_queue:
                self._grant_waiters_locked(meta, block)
        tx.held_locks = {}
