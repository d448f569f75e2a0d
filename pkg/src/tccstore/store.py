"""Physical storage tier: a flat, memory-resident array of fixed-size blocks."""

from dataclasses import dataclass, field

from .errors import BlockRangeError


class BlockStore:
    """Fixed-size blocks addressed by integer id.

    Blocks are held as immutable ``bytes`` objects and replaced wholesale, so a
    single read or write of one block is atomic (a list slot assignment is a
    single reference swap).  Mutual exclusion above the block level belongs to
    the schedulers.
    """

    def __init__(self, capacity, block_size=4096):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if block_size < 64:
            raise ValueError("block_size must be >= 64")
        self.capacity = capacity
        self.block_size = block_size
        self._zero = bytes(block_size)
        self._blocks = [self._zero] * capacity

    def _check(self, block):
        if not 0 <= block < self.capacity:
            raise BlockRangeError(f"block {block} out of range [0, {self.capacity})")

    def read(self, block):
        self._check(block)
        return self._blocks[block]

    def write(self, block, data):
        self._check(block)
        self._blocks[block] = self.coerce(data)

    def coerce(self, data):
        """Return ``data`` as a full-size immutable block image."""
        data = bytes(data)
        if len(data) > self.block_size:
            raise ValueError(f"block image of {len(data)} bytes exceeds block size {self.block_size}")
        if len(data) < self.block_size:
            data = data + bytes(self.block_size - len(data))
        return data

    def publish(self, ws):
        for block, data in ws.pages.items():
            self._blocks[block] = data

    def restore(self, images):
        for block, data in images.items():
            self._blocks[block] = data

    def snapshot(self):
        return list(self._blocks)

    def load(self, snapshot):
        if len(snapshot) != self.capacity:
            raise ValueError("snapshot capacity mismatch")
        self._blocks = list(snapshot)


@dataclass
class Workspace:
    """Private pages of one operation attempt plus the before-images of its writes."""

    owner: tuple
    pages: dict = field(default_factory=dict)
    before_images: dict = field(default_factory=dict)

    def put(self, block, data, current):
        # before-image is captured once, at the first write to the block
        if block not in self.before_images:
            self.before_images[block] = current
        self.pages[block] = data

    def get(self, block):
        return self.pages.get(block)
