"""Schedule event log and its line-delimited text format.

One event per line, six space-separated columns followed by optional
``key=value`` extras::

    tx_id op_id event block mode latchcount [key=value ...]

``-`` marks an empty column.  ``BeginOp`` lines carry ``op=<name>``,
``args=<hex>`` and, for operations run to undo an aborted one, ``inverse=1``.
``EndOp`` lines carry ``outcome=succeeded|failed|tx_abort_required``.
"""

import enum
import threading
from dataclasses import dataclass, field
from typing import Optional


class EventKind(enum.Enum):
    BEGIN_TX = "BeginTx"
    END_TX = "EndTx"
    ABORT_TX = "AbortTx"
    BEGIN_OP = "BeginOp"
    END_OP = "EndOp"
    ACTION = "Action"
    LOCK = "LockAcquired"
    COMMIT = "Commit"


_KINDS = {k.value: k for k in EventKind}


class LogParseError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleEvent:
    kind: EventKind
    tx_id: int
    op_id: Optional[int] = None
    block: Optional[int] = None
    mode: Optional[str] = None
    latchcount: Optional[int] = None
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    def to_line(self):
        def col(v):
            return "-" if v is None else str(v)

        cols = [col(self.tx_id), col(self.op_id), self.kind.value,
                col(self.block), col(self.mode), col(self.latchcount)]
        cols += [f"{k}={v}" for k, v in self.extra.items()]
        return " ".join(cols)

    @classmethod
    def from_line(cls, line):
        parts = line.split()
        if len(parts) < 6:
            raise LogParseError(f"expected at least 6 columns: {line!r}")
        kind = _KINDS.get(parts[2])
        if kind is None:
            raise LogParseError(f"unknown event {parts[2]!r}")

        def num(s):
            if s == "-":
                return None
            try:
                return int(s)
            except ValueError:
                raise LogParseError(f"bad integer column {s!r} in {line!r}") from None

        extra = {}
        for kv in parts[6:]:
            k, sep, v = kv.partition("=")
            if not sep:
                raise LogParseError(f"bad extra field {kv!r}")
            extra[k] = v
        return cls(kind, num(parts[0]), num(parts[1]), num(parts[3]),
                   None if parts[4] == "-" else parts[4], num(parts[5]), extra)


class ScheduleLog:
    """Append-only, internally synchronized event sequence with a global order."""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self._events = []
        self._lock = threading.Lock()

    def append(self, kind, tx_id, op_id=None, block=None, mode=None, latchcount=None, **extra):
        if not self.enabled:
            return
        ev = ScheduleEvent(kind, tx_id, op_id, block, mode, latchcount, extra)
        with self._lock:
            self._events.append(ev)

    def events(self):
        with self._lock:
            return list(self._events)

    def clear(self):
        with self._lock:
            self._events.clear()

    def __len__(self):
        return len(self._events)

    def to_text(self):
        return "".join(ev.to_line() + "\n" for ev in self.events())

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def parse_log(text):
    """Parse text in the line format back into a list of events."""
    return [ScheduleEvent.from_line(line) for line in text.splitlines() if line.strip()]
