"""Offline schedule checking.

Dependency graphs are built from the ``Action`` events of committed
transactions: on each block the accesses are ordered by the latch-counter
value stamped at clearing, and every pair from different transactions with at
least one write yields an edge.  An edge is *commutative* when the two
operation instances are declared commutative.

* conflict check: the whole graph is acyclic;
* view check: the graph without commutative edges is acyclic;
* replay check: some serial order of the committed transactions reproduces
  every operation's return value and the final logical state.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import networkx as nx

from .schedlog import EventKind, ScheduleEvent, parse_log


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    block: int
    kind: str  # "ww", "wr" or "rw"
    commutative: bool


@dataclass
class DependencyGraph:
    nodes: set = field(default_factory=set)
    edges: list = field(default_factory=list)

    def to_networkx(self, include_commutative=True):
        g = nx.MultiDiGraph()
        g.add_nodes_from(self.nodes)
        for e in self.edges:
            if include_commutative or not e.commutative:
                g.add_edge(e.src, e.dst, block=e.block, kind=e.kind, commutative=e.commutative)
        return g


@dataclass(frozen=True)
class Verdict:
    ok: bool
    cycle: tuple = ()

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class _Access:
    tx_id: int
    op_id: int
    mode: str
    latchcount: int


def _events(log):
    if isinstance(log, str):
        return parse_log(log)
    return list(log)


def committed_ids(events):
    return {ev.tx_id for ev in events if ev.kind is EventKind.COMMIT}


def operation_semantics(events):
    """``(tx_id, op_id) -> (op_name, args_bytes)`` from ``BeginOp`` events."""
    out = {}
    for ev in events:
        if ev.kind is EventKind.BEGIN_OP:
            raw = ev.extra.get("args", "-")
            out[(ev.tx_id, ev.op_id)] = (ev.extra.get("op"), b"" if raw == "-" else bytes.fromhex(raw))
    return out


def _commutes_fn(registry):
    """Normalize ``registry`` into ``f(name_a, args_a, name_b, args_b) -> bool``."""
    if registry is None:
        return lambda *a: False
    if callable(registry) and not hasattr(registry, "registry"):
        return registry
    # an Engine: resolve names through it, ask its semantics registry
    reg = registry.registry

    def commutes(name_a, args_a, name_b, args_b):
        return reg.is_commutative(registry.op_type(name_a), args_a,
                                  registry.op_type(name_b), args_b)
    return commutes


def build_graph(log, registry=None):
    """Dependency graph over the committed transactions of ``log``.

    ``log`` is a list of events or text in the line format.  ``registry`` is
    an :class:`~tccstore.engine.Engine` (its declarations are used), a
    predicate ``f(name_a, args_a, name_b, args_b)`` or ``None``.
    """
    events = _events(log)
    committed = committed_ids(events)
    sems = operation_semantics(events)
    commutes = _commutes_fn(registry)
    per_block = {}
    for ev in events:
        if ev.kind is EventKind.ACTION and ev.tx_id in committed:
            per_block.setdefault(ev.block, []).append(
                _Access(ev.tx_id, ev.op_id, ev.mode, ev.latchcount))
    g = DependencyGraph(nodes=set(committed))
    for block, accesses in per_block.items():
        accesses.sort(key=lambda a: a.latchcount)
        for i, a in enumerate(accesses):
            for b in accesses[i + 1:]:
                if a.tx_id == b.tx_id or (a.mode == "R" and b.mode == "R"):
                    continue
                sa, sb = sems.get((a.tx_id, a.op_id)), sems.get((b.tx_id, b.op_id))
                comm = sa is not None and sb is not None and commutes(*sa, *sb)
                kind = ("w" if a.mode == "W" else "r") + ("w" if b.mode == "W" else "r")
                g.edges.append(Edge(a.tx_id, b.tx_id, block, kind, comm))
    return g


def _check(graph, include_commutative):
    g = graph.to_networkx(include_commutative)
    try:
        cyc = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return Verdict(True)
    return Verdict(False, tuple(u for u, *_ in cyc))


def check_conflict_serializable(graph):
    return _check(graph, True)


def check_view_serializable(graph):
    return _check(graph, False)


# -- serial replay ----------------------------------------------------------

@dataclass
class TxnTrace:
    """What a committed transaction did, as seen by its client."""

    tx_id: int
    ops: list  # [(op_name, args, result)]


class EngineReplayer:
    """Replays operations serially on a private engine.

    ``make_engine`` returns a fresh engine already holding the pre-run
    state; ``state`` maps its store to the logical state being compared.
    """

    def __init__(self, make_engine: Callable, state: Callable):
        self.engine = make_engine()
        self._state = state

    def snapshot(self):
        return self.engine.store.snapshot()

    def restore(self, snap):
        self.engine.store.load(snap)

    def run(self, op_name, args):
        tx = self.engine.begin_tx()
        try:
            return self.engine.execute(tx, op_name, args).value
        finally:
            self.engine.end_tx(tx)

    def state(self):
        return self._state(self.engine.store)


def replay_equivalence(txns, actual_final_state, replayer, order_hint=None, max_txns=8):
    """Return a serial order of ``txns`` matching results and final state, or ``None``.

    Orders are explored depth-first, abandoning a prefix as soon as one of
    its operations returns something other than what the real run saw.
    ``order_hint`` (tx ids) decides which branches are tried first.
    """
    txns = list(txns)
    if len(txns) > max_txns:
        raise ValueError(f"replay limited to {max_txns} transactions, got {len(txns)}")
    if order_hint:
        rank = {t: i for i, t in enumerate(order_hint)}
        txns.sort(key=lambda t: rank.get(t.tx_id, len(rank)))
    start = replayer.snapshot()
    used = [False] * len(txns)
    order = []

    def search():
        if len(order) == len(txns):
            return replayer.state() == actual_final_state
        here = replayer.snapshot()
        for i, t in enumerate(txns):
            if used[i]:
                continue
            if all(replayer.run(name, args) == result for name, args, result in t.ops):
                used[i] = True
                order.append(t.tx_id)
                if search():
                    return True
                order.pop()
                used[i] = False
            replayer.restore(here)
        return False

    try:
        return list(order) if search() else None
    finally:
        replayer.restore(start)


def report(graph, conflict=None, view=None):
    """Human-readable verdict text with witness cycles."""
    conflict = conflict or check_conflict_serializable(graph)
    view = view or check_view_serializable(graph)
    lines = [f"transactions: {len(graph.nodes)}  edges: {len(graph.edges)} "
             f"({sum(e.commutative for e in graph.edges)} commutative)"]
    for name, v in (("conflict-serializable", conflict), ("view-serializable", view)):
        lines.append(f"{name}: {'yes' if v.ok else 'NO'}")
        if not v.ok:
            lines.append("  cycle: " + " -> ".join(map(str, v.cycle + v.cycle[:1])))
    return "\n".join(lines)
