"""Exception hierarchy for the engine."""

import enum


class EngineError(Exception):
    """Base class for all engine errors."""


class BlockRangeError(EngineError, IndexError):
    pass


class RegistrationError(EngineError):
    pass


class InterfaceError(EngineError):
    """A call was made outside the window in which it is legal."""


class TransactionStateError(EngineError):
    pass


class OperationError(EngineError):
    """A registered operation program raised something other than a latch failure."""


class AbortReason(enum.Enum):
    COUNTER_GAP = "counter_gap"
    DEADLOCK = "deadlock"
    UNCOMMITTED = "uncommitted"
    USER = "user"


class TxAborted(EngineError):
    """The transaction was aborted by the engine (or already was)."""

    def __init__(self, tx_id, reason=AbortReason.USER):
        super().__init__(f"transaction {tx_id} aborted ({reason.value})")
        self.tx_id = tx_id
        self.reason = reason
        # the interrupted operation's OpResult, when an operation triggered the abort
        self.result = None


class OperationFailed(Exception):
    """Raised inside an operation program when a latch cannot be taken.

    Control flow only: the engine catches it and retries the operation.
    Deliberately not an EngineError so programs cannot swallow it with a
    broad ``except EngineError``.
    """
