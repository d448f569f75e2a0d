"""Paged B+-tree built only from registered engine operations.

Block 0 holds the tree metadata (magic, root, height and the allocation
cursor); every other block is a node.  Keys and values are unsigned 64-bit
integers.  Deletion is lazy: keys are removed from their leaf and nodes are
never merged, so an insert followed by a delete of the same key leaves the
key set exactly as it was.

Node layout, big-endian::

    header  kind:u8 nkeys:u16 right_sibling:u32, padded to 8 bytes
    leaf    nkeys x (key:u64 value:u64)
    inner   nkeys x key:u64, then (nkeys + 1) x child:u32

Right siblings are only maintained for leaves; 0 means "none" since block 0
is never a node.
"""

import bisect
import struct
from dataclasses import dataclass, field

from .errors import EngineError

META_BLOCK = 0
MAGIC = 0x54434342
LEAF = 1
INNER = 2

_META = struct.Struct(">IIII")  # magic, root, height, next_free
_HEADER = struct.Struct(">BHI")
_HEADER_SIZE = 8
_KEY = struct.Struct(">Q")
_KV = struct.Struct(">QQ")
_RANGE = struct.Struct(">QQ")

OP_NAMES = ("btreeInsert", "btreeDelete", "btreeLookup", "btreeScan", "btreeInit")


class TreeFullError(EngineError):
    """No free block is left for a split."""


class TreeFormatError(EngineError):
    pass


@dataclass
class Node:
    kind: int
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)  # leaf values
    children: list = field(default_factory=list)  # inner child block ids
    sibling: int = 0

    @property
    def is_leaf(self):
        return self.kind == LEAF

    def encode(self, block_size):
        n = len(self.keys)
        parts = [_HEADER.pack(self.kind, n, self.sibling).ljust(_HEADER_SIZE, b"\0")]
        if self.is_leaf:
            parts += [_KV.pack(k, v) for k, v in zip(self.keys, self.values)]
        else:
            parts.append(struct.pack(f">{n}Q", *self.keys))
            parts.append(struct.pack(f">{n + 1}I", *self.children))
        data = b"".join(parts)
        if len(data) > block_size:
            raise TreeFormatError(f"node of {n} keys does not fit in {block_size} bytes")
        return data.ljust(block_size, b"\0")

    @classmethod
    def decode(cls, data):
        kind, n, sibling = _HEADER.unpack_from(data, 0)
        if kind == LEAF:
            flat = struct.unpack_from(f">{2 * n}Q", data, _HEADER_SIZE)
            return cls(LEAF, list(flat[0::2]), list(flat[1::2]), [], sibling)
        if kind == INNER:
            keys = list(struct.unpack_from(f">{n}Q", data, _HEADER_SIZE))
            children = list(struct.unpack_from(f">{n + 1}I", data, _HEADER_SIZE + 8 * n))
            return cls(INNER, keys, [], children, sibling)
        raise TreeFormatError(f"unknown node kind {kind}")


def leaf_capacity(block_size):
    return (block_size - _HEADER_SIZE) // _KV.size


def inner_capacity(block_size):
    # n keys and n + 1 four-byte children
    return (block_size - _HEADER_SIZE - 4) // 12


def encode_kv(key, value):
    return _KV.pack(key, value)


def encode_key(key):
    return _KEY.pack(key)


def encode_range(lo, hi):
    return _RANGE.pack(lo, hi)


def arg_key(args):
    return _KEY.unpack_from(args, 0)[0]


def distinct_keys(a, b):
    return arg_key(a) != arg_key(b)


def _read_meta(data):
    magic, root, height, next_free = _META.unpack_from(data, 0)
    if magic != MAGIC:
        raise TreeFormatError("block 0 holds no tree")
    return root, height, next_free


class BTree:
    """Registers the tree operations on ``engine`` and offers typed wrappers.

    ``max_keys`` caps keys per node (both kinds) below what the block size
    allows, which makes small test trees split often.  With
    ``leaf_for_update`` the descent takes the leaf's write latch at first
    read; without it the leaf is read shared and upgraded when written, the
    pattern that turns two concurrent inserts into a mutual latch failure.
    """

    def __init__(self, engine, max_keys=None, leaf_for_update=True, commutative_inserts=True):
        self.engine = engine
        bs = engine.store.block_size
        self.leaf_max = leaf_capacity(bs)
        self.inner_max = inner_capacity(bs)
        if max_keys is not None:
            if max_keys < 3:
                raise ValueError("max_keys must be >= 3")
            self.leaf_max = min(self.leaf_max, max_keys)
            self.inner_max = min(self.inner_max, max_keys)
        self.leaf_for_update = leaf_for_update
        self.ops = {
            "btreeInsert": engine.register_operation("btreeInsert", self._insert),
            "btreeDelete": engine.register_operation("btreeDelete", self._delete),
            "btreeLookup": engine.register_operation("btreeLookup", self._lookup),
            "btreeScan": engine.register_operation("btreeScan", self._scan),
            "btreeInit": engine.register_operation("btreeInit", self._init),
        }
        if commutative_inserts:
            # equal keys excluded: a duplicate insert returns False, so order shows
            engine.add_commutativity("btreeInsert", None, "btreeInsert", None,
                                     relation=distinct_keys)
        engine.add_inverse("btreeInsert", lambda args: args[:_KEY.size], "btreeDelete")

    # -- typed wrappers ----------------------------------------------------

    def create(self):
        """Format an empty tree in its own committed transaction."""
        tx = self.engine.begin_tx()
        self.engine.execute(tx, "btreeInit")
        self.engine.end_tx(tx)

    def insert(self, tx, key, value):
        return self.engine.execute(tx, "btreeInsert", encode_kv(key, value))

    def delete(self, tx, key):
        return self.engine.execute(tx, "btreeDelete", encode_key(key))

    def lookup(self, tx, key):
        return self.engine.execute(tx, "btreeLookup", encode_key(key))

    def scan(self, tx, lo, hi):
        return self.engine.execute(tx, "btreeScan", encode_range(lo, hi))

    # -- programs ----------------------------------------------------------

    def _init(self, h, args):
        h.write(META_BLOCK, _META.pack(MAGIC, 1, 1, 2))
        h.write(1, Node(LEAF).encode(h.block_size))
        return True

    def _descend(self, h, key, leaf_update):
        """Return ``(meta, path)``; ``path`` is a list of ``(block, node)`` from root to leaf."""
        meta = _read_meta(h.read(META_BLOCK))
        root, height, _ = meta
        block = root
        path = []
        for depth in range(height):
            at_leaf = depth == height - 1
            node = Node.decode(h.read(block, for_update=at_leaf and leaf_update))
            path.append((block, node))
            if at_leaf:
                break
            block = node.children[bisect.bisect_right(node.keys, key)]
        return meta, path

    def _lookup(self, h, args):
        key = arg_key(args)
        _, path = self._descend(h, key, False)
        leaf = path[-1][1]
        i = bisect.bisect_left(leaf.keys, key)
        if i < len(leaf.keys) and leaf.keys[i] == key:
            return leaf.values[i]
        return None

    def _scan(self, h, args):
        lo, hi = _RANGE.unpack(args)
        if lo > hi:
            raise ValueError("scan bounds out of order")
        _, path = self._descend(h, lo, False)
        block, leaf = path[-1]
        out = []
        while True:
            for k, v in zip(leaf.keys, leaf.values):
                if k > hi:
                    return out
                if k >= lo:
                    out.append((k, v))
            if not leaf.sibling:
                return out
            leaf = Node.decode(h.read(leaf.sibling))

    def _delete(self, h, args):
        key = arg_key(args)
        _, path = self._descend(h, key, self.leaf_for_update)
        block, leaf = path[-1]
        i = bisect.bisect_left(leaf.keys, key)
        if i == len(leaf.keys) or leaf.keys[i] != key:
            return False
        del leaf.keys[i]
        del leaf.values[i]
        h.write(block, leaf.encode(h.block_size))
        return True

    def _insert(self, h, args):
        key, value = _KV.unpack(args)
        (root, height, next_free), path = self._descend(h, key, self.leaf_for_update)
        block, leaf = path[-1]
        i = bisect.bisect_left(leaf.keys, key)
        if i < len(leaf.keys) and leaf.keys[i] == key:
            return False
        leaf.keys.insert(i, key)
        leaf.values.insert(i, value)
        bs = h.block_size
        if len(leaf.keys) <= self.leaf_max:
            h.write(block, leaf.encode(bs))
            return True

        alloc = [next_free]

        def allocate():
            b = alloc[0]
            if b >= h.capacity:
                raise TreeFullError(f"no free block (capacity {h.capacity})")
            alloc[0] = b + 1
            return b

        # split the leaf, then push separators up as long as nodes overflow
        mid = len(leaf.keys) // 2
        right = Node(LEAF, leaf.keys[mid:], leaf.values[mid:], [], leaf.sibling)
        right_block = allocate()
        leaf.keys, leaf.values = leaf.keys[:mid], leaf.values[:mid]
        leaf.sibling = right_block
        h.write(block, leaf.encode(bs))
        h.write(right_block, right.encode(bs))
        sep = right.keys[0]
        level = len(path) - 2
        while True:
            if level < 0:
                new_root = allocate()
                h.write(new_root, Node(INNER, [sep], [], [block, right_block]).encode(bs))
                root, height = new_root, height + 1
                break
            block, node = path[level]
            j = bisect.bisect_right(node.keys, sep)
            node.keys.insert(j, sep)
            node.children.insert(j + 1, right_block)
            if len(node.keys) <= self.inner_max:
                h.write(block, node.encode(bs))
                break
            mid = len(node.keys) // 2
            sep_up = node.keys[mid]
            right = Node(INNER, node.keys[mid + 1:], [], node.children[mid + 1:])
            node.keys, node.children = node.keys[:mid], node.children[:mid + 1]
            right_block = allocate()
            h.write(block, node.encode(bs))
            h.write(right_block, right.encode(bs))
            sep = sep_up
            level -= 1
        h.write(META_BLOCK, _META.pack(MAGIC, root, height, alloc[0]))
        return True


# -- offline inspection (direct store access, no concurrency control) -------

def _leftmost_leaf(store):
    root, height, _ = _read_meta(store.read(META_BLOCK))
    block = root
    for _ in range(height - 1):
        block = Node.decode(store.read(block)).children[0]
    return block


def logical_state(store):
    """The tree's key -> value map, read straight from ``store``."""
    out = {}
    block = _leftmost_leaf(store)
    while block:
        node = Node.decode(store.read(block))
        out.update(zip(node.keys, node.values))
        block = node.sibling
    return out


def validate(store, leaf_max=None, inner_max=None):
    """Walk the tree and return a list of structural problems (empty when sound)."""
    problems = []
    root, height, next_free = _read_meta(store.read(META_BLOCK))
    leaf_max = leaf_max or leaf_capacity(store.block_size)
    inner_max = inner_max or inner_capacity(store.block_size)
    leaves = []
    seen = set()

    def walk(block, depth, lo, hi):
        if block in seen:
            problems.append(f"block {block} reachable twice")
            return
        seen.add(block)
        if not 0 < block < next_free:
            problems.append(f"block {block} outside allocated range")
            return
        node = Node.decode(store.read(block))
        if node.keys != sorted(node.keys) or len(set(node.keys)) != len(node.keys):
            problems.append(f"block {block} keys not strictly ascending")
        if any((lo is not None and k < lo) or (hi is not None and k >= hi) for k in node.keys):
            problems.append(f"block {block} key outside separator bounds [{lo}, {hi})")
        if node.is_leaf:
            if depth != height - 1:
                problems.append(f"leaf {block} at depth {depth}, expected {height - 1}")
            if len(node.keys) > leaf_max:
                problems.append(f"leaf {block} overfull")
            leaves.append(block)
            return
        if depth >= height - 1:
            problems.append(f"inner node {block} at leaf depth")
            return
        if not node.keys or len(node.keys) > inner_max:
            problems.append(f"inner node {block} fan-out {len(node.keys) + 1} out of range")
        bounds = [lo] + node.keys + [hi]
        for i, child in enumerate(node.children):
            walk(child, depth + 1, bounds[i], bounds[i + 1])

    walk(root, 0, None, None)
    # the sibling chain must visit the leaves in key order
    chain = []
    block = leaves[0] if leaves else 0
    while block and len(chain) <= len(leaves):
        chain.append(block)
        block = Node.decode(store.read(block)).sibling
    if chain != leaves:
        problems.append("leaf sibling chain disagrees with tree order")
    return problems
