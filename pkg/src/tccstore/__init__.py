"""Transactional block storage with two-tier (latch, then lock) concurrency control."""

from .engine import Engine, EngineConfig, EngineStats, OpHandle, OpResult
from .errors import (AbortReason, BlockRangeError, EngineError, InterfaceError,
                     OperationError, RegistrationError, TransactionStateError, TxAborted)
from .opsched import AccessMode, ImmunitySet, OpOutcome, RWAction
from .schedlog import EventKind, ScheduleEvent, ScheduleLog, parse_log
from .semantics import OpSem, SemanticsRegistry
from .store import BlockStore
from .txsched import LockMode, TxStatus

__all__ = [
    "AbortReason", "AccessMode", "BlockRangeError", "BlockStore", "Engine", "EngineConfig",
    "EngineError", "EngineStats", "EventKind", "ImmunitySet", "InterfaceError", "LockMode",
    "OpHandle", "OpOutcome", "OpResult", "OpSem", "OperationError", "RWAction",
    "RegistrationError", "ScheduleEvent", "ScheduleLog", "SemanticsRegistry",
    "TransactionStateError", "TxAborted", "TxStatus", "parse_log",
]
