"""Operational scheduler: progressive two-phase latching over block actions.

An operation attempt goes through three phases.  Early latching takes, in
ascending block order and waiting if necessary, every action recorded in the
operation's immunity set.  Execution latches further blocks with a
non-waiting try-acquire; a conflict fails the attempt, and the failed action
joins the immunity set so the retry latches it up front.  Clearing publishes
the private workspace, stamps each accessed block with its latch counter and
releases the latches.

A failed action is always one the attempt did not already hold, and every
held action came from the immunity set or an earlier success, so no
invocation can fail twice on the same action.
"""

import enum
import itertools
import threading
from typing import NamedTuple

from .errors import InterfaceError, OperationFailed
from .store import Workspace


class AccessMode(enum.Enum):
    READ = "R"
    WRITE = "W"

    # members are singletons; the default hash goes through Python code
    __hash__ = object.__hash__


R = AccessMode.READ
W = AccessMode.WRITE


class RWAction(NamedTuple):
    block: int
    mode: AccessMode

    def __repr__(self):
        return f"<{self.block},{self.mode.value}>"


class ImmunitySet:
    """Actions an invocation has failed on; latched up front on every retry."""

    def __init__(self, actions=()):
        self._modes = {}
        for action in actions:
            self.add(action)

    def add(self, action):
        # a write entry subsumes a read entry on the same block
        if self._modes.get(action.block) is not W:
            self._modes[action.block] = action.mode

    def latch_plan(self):
        return [RWAction(b, self._modes[b]) for b in sorted(self._modes)]

    def __contains__(self, action):
        mode = self._modes.get(action.block)
        return mode is W or mode is action.mode

    def __iter__(self):
        return iter(self.latch_plan())

    def __len__(self):
        return len(self._modes)

    def __repr__(self):
        return f"ImmunitySet({self.latch_plan()!r})"


class Phase(enum.Enum):
    EARLY_LATCHING = "early_latching"
    EXECUTION = "execution"
    CLEARING = "clearing"
    DONE = "done"


class OpOutcome(enum.Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    TX_ABORT_REQUIRED = "tx_abort_required"


_attempt_ids = itertools.count(1)


class OperationContext:
    """One attempt of one operation invocation, confined to its worker."""

    __slots__ = ("tx_id", "op_id", "op_type", "args", "immunity", "sem", "inverse_of", "attempt",
                 "phase", "held", "accessed", "exclusive", "actions", "workspace", "snapshots",
                 "failed", "failed_action")

    def __init__(self, tx_id, op_id, op_type, args, immunity, sem, inverse_of=None):
        self.tx_id = tx_id
        self.op_id = op_id
        self.op_type = op_type
        self.args = args
        self.immunity = immunity
        self.sem = sem
        self.inverse_of = inverse_of
        self.attempt = next(_attempt_ids)
        self.phase = Phase.EARLY_LATCHING
        self.held = {}
        self.accessed = {}
        self.exclusive = set()
        self.actions = set()
        self.workspace = Workspace(owner=(tx_id, op_id))
        self.snapshots = {}
        self.failed = False
        self.failed_action = None

    def lock_modes(self, shared, exclusive):
        """Per accessed block, ``exclusive`` if modified or read for update, else ``shared``."""
        ex = self.exclusive
        return {b: exclusive if (m is W or b in ex) else shared for b, m in self.accessed.items()}

    @property
    def written(self):
        return [b for b, m in self.accessed.items() if m is W]


class _LatchWaiter:
    __slots__ = ("key", "mode", "event")

    def __init__(self, key, mode):
        self.key = key
        self.mode = mode
        self.event = threading.Event()


def _grantable(meta, mode):
    if meta.latch_waiters:
        return False
    return meta.latch_mode is None or (mode is R and meta.latch_mode is R)


def _grant(meta, key, mode):
    meta.latch_holders.add(key)
    meta.latch_mode = mode


class OpScheduler:
    """Latch table and phase logic.  Shares the CC mutex with the transactional tier."""

    def __init__(self, store, metas, mutex, stats):
        self.store = store
        self.metas = metas
        self.mutex = mutex
        self.stats = stats
        self.capacity = store.capacity
        self._metas = metas._metas

    # -- early latching ----------------------------------------------------

    def latch_blocking(self, key, plan):
        """Latch ``plan`` (ascending RWActions) in order, waiting as needed."""
        held = {}
        for block, mode in plan:
            waiter = None
            with self.mutex:
                meta = self.metas[block]
                if _grantable(meta, mode):
                    _grant(meta, key, mode)
                else:
                    waiter = _LatchWaiter(key, mode)
                    meta.latch_waiters.append(waiter)
                    self.stats.latch_waits += 1
            if waiter is not None:
                waiter.event.wait()
            held[block] = mode
        return held

    def begin(self, ctx):
        ctx.held = self.latch_blocking(ctx.attempt, ctx.immunity.latch_plan())
        ctx.phase = Phase.EXECUTION
        return ctx

    # -- execution ---------------------------------------------------------

    def _latch(self, ctx, block, mode, held):
        """Try-acquire a latch the attempt does not hold yet; fail the attempt on conflict."""
        with self.mutex:
            meta = self.metas[block]
            if held is R:
                # upgrade: only the sole reader may take the write latch
                ok = len(meta.latch_holders) == 1
                if ok:
                    meta.latch_mode = W
            else:
                cur = meta.latch_mode
                ok = not meta.latch_waiters and (cur is None or (mode is R and cur is R))
                if ok:
                    meta.latch_holders.add(ctx.attempt)
                    meta.latch_mode = mode
            if not ok:
                self._fail_locked(ctx, RWAction(block, mode))
        if not ok:
            raise OperationFailed(RWAction(block, mode))
        ctx.held[block] = mode

    def _fail_locked(self, ctx, action):
        ctx.failed = True
        ctx.failed_action = action
        ctx.actions.add(action)
        ctx.immunity.add(action)
        self.release_latches_locked(ctx)
        self.stats.op_failures += 1

    def _check_window(self, ctx):
        if ctx.phase is not Phase.EXECUTION:
            raise InterfaceError(f"read/write outside an open operation window ({ctx.phase.value})")
        if ctx.failed:
            raise OperationFailed(ctx.failed_action)

    def read(self, ctx, block, for_update=False):
        if ctx.phase is not Phase.EXECUTION or ctx.failed:
            self._check_window(ctx)
        if not 0 <= block < self.capacity:
            self.store._check(block)
        mode = W if for_update else R
        held = ctx.held.get(block)
        if held is None and mode is R:
            # inlined shared try-latch, the overwhelmingly common case
            with self.mutex:
                meta = self._metas[block] or self.metas[block]
                ok = not meta.latch_waiters and meta.latch_mode is not W
                if ok:
                    meta.latch_holders.add(ctx.attempt)
                    meta.latch_mode = R
                else:
                    self._fail_locked(ctx, RWAction(block, R))
            if not ok:
                raise OperationFailed(RWAction(block, R))
            ctx.held[block] = R
        elif held is None or (held is R and mode is W):
            self._latch(ctx, block, mode, held)
        ctx.actions.add((block, mode))
        if block not in ctx.accessed:
            ctx.accessed[block] = R
        if for_update:
            ctx.exclusive.add(block)
        page = ctx.workspace.pages.get(block)
        return page if page is not None else self.store._blocks[block]

    def write(self, ctx, block, data):
        if ctx.phase is not Phase.EXECUTION or ctx.failed:
            self._check_window(ctx)
        if not 0 <= block < self.capacity:
            self.store._check(block)
        data = self.store.coerce(data)
        held = ctx.held.get(block)
        if held is not W:
            self._latch(ctx, block, W, held)
        ctx.actions.add((block, W))
        ctx.workspace.put(block, data, self.store._blocks[block])
        ctx.accessed[block] = W

    # -- clearing (mutex held by caller) -----------------------------------

    def release_latches_locked(self, ctx):
        self.release_key_locked(ctx.attempt, ctx.held)
        ctx.held = {}

    def release_key_locked(self, key, blocks):
        metas = self._metas
        for block in blocks:
            meta = metas[block]
            holders = meta.latch_holders
            holders.discard(key)
            if not holders:
                meta.latch_mode = None
            waiters = meta.latch_waiters
            while waiters:
                w = waiters[0]
                if meta.latch_mode is None or (w.mode is R and meta.latch_mode is R):
                    waiters.popleft()
                    _grant(meta, w.key, w.mode)
                    w.event.set()
                else:
                    break

    def publish_locked(self, ctx):
        """Install the workspace and take one latch-counter snapshot per accessed block."""
        ctx.phase = Phase.CLEARING
        self.store.publish(ctx.workspace)
        snaps = {}
        metas = self._metas
        for block in sorted(ctx.accessed):
            meta = metas[block]
            snaps[block] = meta.latchcount
            meta.latchcount += 1
        ctx.snapshots = snaps
        self.release_latches_locked(ctx)
        return snaps

    # -- diagnostics -------------------------------------------------------

    def latch_wait_cycle(self):
        """Return a cycle in the latch waits-for relation, or ``None``."""
        with self.mutex:
            edges = {}
            for _, meta in self.metas.items():
                for w in meta.latch_waiters:
                    edges.setdefault(w.key, set()).update(meta.latch_holders)
        return _find_cycle(edges)


def _find_cycle(edges):
    color = {}
    stack = []

    def visit(node):
        color[node] = 1
        stack.append(node)
        for nxt in edges.get(node, ()):
            c = color.get(nxt, 0)
            if c == 1:
                return stack[stack.index(nxt):]
            if c == 0:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = 2
        return None

    for node in list(edges):
        if color.get(node, 0) == 0:
            found = visit(node)
            if found:
                return found
    return None
