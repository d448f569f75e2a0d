"""Per-block concurrency-control state shared by the two scheduler tiers.

Every field is guarded by the engine's CC mutex.
"""

from collections import deque


class BlockMeta:
    __slots__ = ("latch_mode", "latch_holders", "latch_waiters", "latchcount",
                 "lockcount", "incre", "lock_holders", "lock_queue", "uncommitted")

    def __init__(self):
        # operational tier
        self.latch_mode = None
        self.latch_holders = set()
        self.latch_waiters = deque()
        self.latchcount = 0
        # transactional tier
        self.lockcount = 0
        self.incre = set()
        self.lock_holders = {}
        self.lock_queue = deque()
        self.uncommitted = []

    def consume_slot(self, snapshot):
        """Retire the locking slot numbered ``snapshot``.

        The slot at the head advances ``lockcount`` and drains any consecutive
        slots already retired out of order; a slot ahead of the head is parked
        in ``incre``.
        """
        assert snapshot >= self.lockcount, (snapshot, self.lockcount)
        if snapshot == self.lockcount:
            self.lockcount += 1
            while self.lockcount in self.incre:
                self.incre.remove(self.lockcount)
                self.lockcount += 1
        else:
            assert snapshot not in self.incre
            self.incre.add(snapshot)


class MetaTable:
    """Lazily populated array of :class:`BlockMeta`, one per block id."""

    def __init__(self, capacity):
        self._metas = [None] * capacity

    def __getitem__(self, block):
        return self._metas[block] or self._create(block)

    def _create(self, block):
        meta = self._metas[block] = BlockMeta()
        return meta

    def peek(self, block):
        return self._metas[block]

    def items(self):
        for block, meta in enumerate(self._metas):
            if meta is not None:
                yield block, meta
