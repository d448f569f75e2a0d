"""Public engine surface.

The seven interface calls (``begin_tx``, ``end_tx``, ``abort_tx``,
``begin_op``, ``end_op``, ``read``, ``write``), operation registration,
semantic declarations and the retry loop that ties the two scheduler tiers
together.

Registered operation programs are called as ``program(handle, args)``.  The
handle exposes block reads and writes and nothing else, so every piece of
state an operation shares with another one lives in a block.
"""

import itertools
from functools import partial
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

from .blockmeta import MetaTable
from .errors import (AbortReason, EngineError, OperationError, OperationFailed, RegistrationError,
                     InterfaceError, TransactionStateError, TxAborted)
from .opsched import (ImmunitySet, OperationContext, OpOutcome, OpScheduler, Phase,
                      RWAction, W, _attempt_ids)
from .schedlog import EventKind, ScheduleLog
from .semantics import OpSem, SemanticsRegistry
from .store import BlockStore
from .txsched import OpRecord, S, X, TransactionContext, TxScheduler, TxStatus

MODES = ("basic", "extended")


@dataclass(frozen=True)
class EngineConfig:
    block_size: int = 4096
    capacity: int = 1 << 16
    scheduler_mode: str = "basic"
    detector_period: float = 0.05
    rng_seed: int = 0
    log_events: bool = True

    def __post_init__(self):
        if self.block_size < 64:
            raise ValueError("block_size must be >= 64")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.scheduler_mode not in MODES:
            raise ValueError(f"scheduler_mode must be one of {MODES}")
        if self.detector_period <= 0:
            raise ValueError("detector_period must be positive")


@dataclass
class EngineStats:
    op_failures: int = 0
    latch_waits: int = 0
    lock_waits: int = 0
    deadlock_victims: int = 0
    counter_gap_aborts: int = 0
    uncommitted_aborts: int = 0
    inverse_retries: int = 0
    tx_committed: int = 0
    tx_aborted: int = 0
    # phase-ordering watchdog: must stay zero
    latch_held_at_lock_phase: int = 0

    def snapshot(self):
        return replace(self)


@dataclass(frozen=True)
class OpResult:
    value: Any
    retries: int
    failed_actions: tuple = ()
    distinct_actions: int = 0
    blocked_retries: int = 0

    @property
    def progressive(self):
        """No action failed twice, and failures stay within the action count."""
        return (len(set(self.failed_actions)) == len(self.failed_actions)
                and len(self.failed_actions) <= self.distinct_actions)


class OpHandle:
    """What a registered program sees, and all it sees.

    ``read(block, for_update=False)`` returns a block's bytes (``for_update``
    takes the write latch at once); ``write(block, data)`` stages new bytes.
    """

    __slots__ = ("read", "write", "block_size", "capacity")

    def __init__(self, engine, ctx):
        self.read = partial(engine.ops.read, ctx)
        self.write = partial(engine.ops.write, ctx)
        self.block_size = engine.store.block_size
        self.capacity = engine.store.capacity


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None, **overrides):
        config = config or EngineConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config
        self.store = BlockStore(config.capacity, config.block_size)
        self.metas = MetaTable(config.capacity)
        self.stats = EngineStats()
        self.log = ScheduleLog(enabled=config.log_events)
        self._mutex = threading.Lock()
        self._programs = {}
        self._names = {}
        self.registry = SemanticsRegistry(known_types=lambda t: t in self._programs)
        self.ops = OpScheduler(self.store, self.metas, self._mutex, self.stats)
        self.txs = TxScheduler(self.metas, self.registry, self._mutex, self.stats,
                               extended=config.scheduler_mode == "extended",
                               detector_period=config.detector_period,
                               on_lock=self._log_lock if config.log_events else None)
        self._live = {}
        self._finished = {}
        self._auto_tx_ids = itertools.count(1)
        # test hook, called as hook(tx_id, op_record) right before the lock phase
        self.lock_phase_hook: Optional[Callable] = None

    @property
    def extended(self):
        return self.txs.extended

    # -- registration ------------------------------------------------------

    def register_operation(self, name, program=None):
        """Register an operation type and return its stable integer id."""
        if name in self._names:
            raise RegistrationError(f"operation {name!r} already registered")
        op_type = len(self._programs) + 1
        self._programs[op_type] = program
        self._names[name] = op_type
        return op_type

    def op_type(self, op):
        if isinstance(op, str):
            try:
                return self._names[op]
            except KeyError:
                raise RegistrationError(f"unknown operation {op!r}") from None
        if op not in self._programs:
            raise RegistrationError(f"unknown operation type {op!r}")
        return op

    def op_name(self, op_type):
        for name, t in self._names.items():
            if t == op_type:
                return name
        raise RegistrationError(f"unknown operation type {op_type!r}")

    def add_commutativity(self, op_1, matcher_1, op_2, matcher_2, relation=None):
        self.registry.add_commutativity(self.op_type(op_1), matcher_1,
                                        self.op_type(op_2), matcher_2, relation)

    def add_inverse(self, op, arg_transform, inverse_op):
        self.registry.add_inverse(self.op_type(op), arg_transform, self.op_type(inverse_op))

    # -- transactions ------------------------------------------------------

    def begin_tx(self, tx_id=None):
        with self._mutex:
            if tx_id is None:
                tx_id = next(self._auto_tx_ids)
                while tx_id in self._live or tx_id in self._finished:
                    tx_id = next(self._auto_tx_ids)
            elif tx_id in self._live:
                raise TransactionStateError(f"transaction {tx_id} is already live")
            self._finished.pop(tx_id, None)
            self._live[tx_id] = TransactionContext(tx_id)
        self.log.append(EventKind.BEGIN_TX, tx_id)
        return tx_id

    def _tx(self, tx_id):
        tx = self._live.get(tx_id)
        if tx is None:
            if tx_id in self._finished:
                raise TxAborted(tx_id) if self._finished[tx_id] is TxStatus.ABORTED else \
                    TransactionStateError(f"transaction {tx_id} already committed")
            raise TransactionStateError(f"unknown transaction {tx_id}")
        return tx

    def tx_status(self, tx_id):
        tx = self._live.get(tx_id)
        if tx is not None:
            return tx.status
        try:
            return self._finished[tx_id]
        except KeyError:
            raise TransactionStateError(f"unknown transaction {tx_id}") from None

    def end_tx(self, tx_id):
        """Commit ``tx_id``; return ``False`` if it was (or had to be) aborted instead."""
        tx = self._live.get(tx_id)
        if tx is None:
            status = self._finished.get(tx_id)
            if status is TxStatus.ABORTED:
                return False
            if status is TxStatus.COMMITTED:
                raise TransactionStateError(f"transaction {tx_id} already committed")
            raise TransactionStateError(f"unknown transaction {tx_id}")
        if tx.doomed is not None:
            self._abort(tx, tx.doomed)
            return False
        if tx.status is not TxStatus.ACTIVE:
            raise TransactionStateError(f"transaction {tx_id} is {tx.status.value}")
        with self._mutex:
            self.txs.release_all_locked(tx)
            tx.status = TxStatus.COMMITTED
            self.stats.tx_committed += 1
            self.log.append(EventKind.COMMIT, tx_id)
            self._retire_locked(tx)
        self.log.append(EventKind.END_TX, tx_id)
        return True

    def abort_tx(self, tx_id):
        tx = self._live.get(tx_id)
        if tx is None:
            status = self._finished.get(tx_id)
            if status is TxStatus.ABORTED:
                return
            if status is TxStatus.COMMITTED:
                raise TransactionStateError(f"transaction {tx_id} already committed")
            raise TransactionStateError(f"unknown transaction {tx_id}")
        self._abort(tx, tx.doomed or AbortReason.USER)

    def _retire_locked(self, tx):
        del self._live[tx.tx_id]
        self._finished[tx.tx_id] = tx.status

    def _abort(self, tx, reason):
        if tx.status is not TxStatus.ACTIVE:
            return
        tx.status = TxStatus.ABORTING
        tx.abort_reason = reason
        self.log.append(EventKind.ABORT_TX, tx.tx_id, reason=reason.value)
        for rec in reversed(tx.history):
            if not rec.before_images:
                continue
            inverse = self.registry.inverse_of(rec.op_type, rec.args) if rec.lock_complete else None
            if inverse is not None:
                inv_type, inv_args = inverse
                self._run(tx, inv_type, inv_args, tx.next_op_id(), inverse_of=rec.sem)
            else:
                self._restore(rec)
        with self._mutex:
            self.txs.release_all_locked(tx)
            tx.status = TxStatus.ABORTED
            self.stats.tx_aborted += 1
            self._retire_locked(tx)
        self.log.append(EventKind.END_TX, tx.tx_id)

    def _restore(self, rec):
        # latches keep in-flight readers of the uncommitted image from racing the undo
        key = next(_attempt_ids)
        plan = [RWAction(b, W) for b in sorted(rec.before_images)]
        held = self.ops.latch_blocking(key, plan)
        with self._mutex:
            self.store.restore(rec.before_images)
            self.ops.release_key_locked(key, held)

    # -- operations --------------------------------------------------------

    def begin_op(self, tx_id, op_type, args=b"", immunity=None, *, op_id=None, inverse_of=None):
        tx = self._tx(tx_id)
        if inverse_of is None and (tx.status is not TxStatus.ACTIVE or tx.doomed is not None):
            raise TxAborted(tx_id, tx.doomed or AbortReason.USER)
        op_type = self.op_type(op_type)
        args = bytes(args)
        if op_id is None:
            op_id = tx.next_op_id()
        sem = inverse_of if inverse_of is not None else OpSem(op_type, args)
        ctx = OperationContext(tx_id, op_id, op_type, args,
                               immunity if immunity is not None else ImmunitySet(),
                               sem, inverse_of)
        if self.log.enabled:
            extra = {"op": self.op_name(op_type), "args": args.hex() or "-"}
            if inverse_of is not None:
                extra["inverse"] = 1
            self.log.append(EventKind.BEGIN_OP, tx_id, op_id, **extra)
        return self.ops.begin(ctx)

    def read(self, ctx, block, for_update=False):
        return self.ops.read(ctx, block, for_update)

    def write(self, ctx, block, data):
        self.ops.write(ctx, block, data)

    def end_op(self, ctx):
        if ctx.phase is not Phase.EXECUTION:
            raise InterfaceError(f"end_op in phase {ctx.phase.value}")
        tx = self._live[ctx.tx_id]
        rec = None
        with self._mutex:
            if ctx.failed:
                self.ops.release_latches_locked(ctx)
                outcome = OpOutcome.FAILED
            elif ctx.inverse_of is not None:
                outcome = self._end_inverse_locked(tx, ctx)
            else:
                blockers = self.txs.uncommitted_blockers_locked(ctx, ctx.sem)
                if blockers:
                    self.ops.release_latches_locked(ctx)
                    self.stats.uncommitted_aborts += 1
                    tx.doomed = AbortReason.UNCOMMITTED
                    outcome = OpOutcome.TX_ABORT_REQUIRED
                else:
                    rec = self._publish_locked(tx, ctx)
                    tx.history.append(rec)
                    outcome = OpOutcome.SUCCEEDED
            ctx.phase = Phase.DONE
            self._log_end_op_locked(ctx, outcome)
            if rec is None:
                return outcome
            if ctx.held:
                self.stats.latch_held_at_lock_phase += 1
            # latches are gone; staying in the same critical section keeps an
            # uncontended lock phase from being preempted away from its clearing
            if self.lock_phase_hook is None:
                reason = self.txs.lock_phase_locked(tx, rec)
        if self.lock_phase_hook is not None:
            self.lock_phase_hook(tx.tx_id, rec)
            reason = self.txs.lock_phase(tx, rec)
        if reason is not None:
            tx.doomed = reason
            return OpOutcome.TX_ABORT_REQUIRED
        return outcome

    def _publish_locked(self, tx, ctx):
        modes = ctx.lock_modes(S, X)
        before = dict(ctx.workspace.before_images)
        snaps = self.ops.publish_locked(ctx)
        rec = OpRecord(ctx.op_id, ctx.op_type, ctx.args, ctx.sem, before, modes, snaps)
        rec.entries = self.txs.register_writes_locked(tx, ctx, ctx.sem, locked=False)
        return rec

    def _end_inverse_locked(self, tx, ctx):
        modes = ctx.lock_modes(S, X)
        blockers = self.txs.inverse_blockers_locked(tx, ctx, modes)
        if blockers:
            # anyone we wait on who is itself parked behind our locks must yield
            self.txs.victimize_waiting_locked(blockers)
            self.ops.release_latches_locked(ctx)
            self.stats.inverse_retries += 1
            return OpOutcome.FAILED
        rec = self._publish_locked(tx, ctx)
        for e in rec.entries:
            e.locked = True
        self.txs.inverse_lock_locked(tx, rec)
        return OpOutcome.SUCCEEDED

    def _log_end_op_locked(self, ctx, outcome):
        if not self.log.enabled:
            return
        if outcome is OpOutcome.SUCCEEDED:
            for block, snap in ctx.snapshots.items():
                self.log.append(EventKind.ACTION, ctx.tx_id, ctx.op_id, block,
                                ctx.accessed[block].value, snap)
        self.log.append(EventKind.END_OP, ctx.tx_id, ctx.op_id, outcome=outcome.value)

    def _log_lock(self, tx_id, op_id, block, mode):
        self.log.append(EventKind.LOCK, tx_id, op_id, block, mode.value)

    def _run(self, tx, op_type, args, op_id, inverse_of=None):
        program = self._programs[op_type]
        if program is None:
            raise RegistrationError(f"operation type {op_type} has no program")
        immunity = ImmunitySet()
        failed = []
        actions = set()
        blocked = 0
        while True:
            ctx = self.begin_op(tx.tx_id, op_type, args, immunity, op_id=op_id,
                                inverse_of=inverse_of)
            value = None
            try:
                value = program(OpHandle(self, ctx), args)
            except OperationFailed:
                pass
            except Exception as exc:
                if not ctx.failed:
                    with self._mutex:
                        self.ops.release_latches_locked(ctx)
                        ctx.phase = Phase.DONE
                    if isinstance(exc, EngineError):
                        raise
                    raise OperationError(f"operation {self.op_name(op_type)} raised {exc!r}") from exc
            actions |= ctx.actions
            outcome = self.end_op(ctx)
            if outcome is OpOutcome.SUCCEEDED:
                return OpResult(value, len(failed), tuple(failed), len(actions), blocked), None
            if outcome is OpOutcome.TX_ABORT_REQUIRED:
                return OpResult(None, len(failed), tuple(failed), len(actions), blocked), tx.doomed
            if ctx.failed_action is not None:
                failed.append(ctx.failed_action)
            else:
                blocked += 1
                time.sleep(min(1e-3, 1e-5 * blocked))

    def execute(self, tx_id, op_type, args=b""):
        """Run a registered operation inside ``tx_id``, retrying it until it completes.

        Raises :class:`TxAborted` if the transaction had to be aborted; the
        abort (undo and lock release) has already happened by then.
        """
        tx = self._tx(tx_id)
        if tx.status is not TxStatus.ACTIVE or tx.doomed is not None:
            raise TxAborted(tx_id, tx.doomed or AbortReason.USER)
        result, reason = self._run(tx, self.op_type(op_type), bytes(args), tx.next_op_id())
        if reason is not None:
            self._abort(tx, reason)
            exc = TxAborted(tx_id, reason)
            exc.result = result
            raise exc
        return result

    run_operation = execute

    # -- diagnostics -------------------------------------------------------

    def detect_deadlocks(self):
        return self.txs.detect_deadlocks()

    def latch_wait_cycle(self):
        return self.ops.latch_wait_cycle()

    def counters(self, block):
        """``(latchcount, lockcount, sorted incre)`` of one block."""
        with self._mutex:
            meta = self.metas[block]
            return meta.latchcount, meta.lockcount, sorted(meta.incre)

    def live_transactions(self):
        return list(self._live)
