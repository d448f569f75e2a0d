import struct
import threading

from tccstore import Engine

_U64 = struct.Struct(">Q")


def blocks_arg(*blocks):
    return bytes(blocks)


def _get(h, args):
    return [_U64.unpack_from(h.read(b), 0)[0] for b in args]


def _bump(h, args):
    out = []
    for b in args:
        v = _U64.unpack_from(h.read(b, for_update=True), 0)[0] + 1
        h.write(b, _U64.pack(v))
        out.append(v)
    return out


def _touch(h, args):
    # write without reading first, so the block is latched shared never
    for b in args:
        h.write(b, _U64.pack(0xAB))
    return True


def counter_engine(**cfg):
    """Engine with three tiny operations over one-byte block lists: get, bump, touch."""
    cfg.setdefault("capacity", 64)
    cfg.setdefault("block_size", 64)
    e = Engine(**cfg)
    e.register_operation("get", _get)
    e.register_operation("bump", _bump)
    e.register_operation("touch", _touch)
    return e


def add_engine(mode):
    """Counters with add/sub that commute with each other and undo one another."""
    e = Engine(capacity=16, block_size=64, scheduler_mode=mode)

    def add(h, args):
        block, delta = args[0], args[1]
        v = _U64.unpack_from(h.read(block, for_update=True), 0)[0] + delta
        h.write(block, _U64.pack(v))

    def sub(h, args):
        block, delta = args[0], args[1]
        v = _U64.unpack_from(h.read(block, for_update=True), 0)[0] - delta
        h.write(block, _U64.pack(v))

    e.register_operation("add", add)
    e.register_operation("sub", sub)
    e.add_commutativity("add", None, "add", None)
    e.add_inverse("add", None, "sub")
    return e


class Gate:
    """Lets a test hold one transaction at its lock phase until released."""

    def __init__(self, engine, tx_id, op_id=None):
        self.tx_id = tx_id
        self.op_id = op_id
        self.arrived = threading.Event()
        self.release = threading.Event()
        engine.lock_phase_hook = self

    def __call__(self, tx_id, rec):
        if tx_id == self.tx_id and (self.op_id is None or rec.op_id == self.op_id):
            self.arrived.set()
            assert self.release.wait(10), "gate never released"


def run_in_thread(fn, *args):
    box = {}

    def target():
        try:
            box["value"] = fn(*args)
        except BaseException as exc:  # surfaced by join()
            box["error"] = exc

    t = threading.Thread(target=target, daemon=True)
    t.start()

    def join(timeout=10):
        t.join(timeout)
        assert not t.is_alive(), "worker did not finish"
        if "error" in box:
            raise box["error"]
        return box.get("value")
    return join
