"""Declared operation semantics: commutativity and inverse operations."""

from typing import Callable, NamedTuple, Optional

from .errors import RegistrationError


class OpSem(NamedTuple):
    """The semantic identity of one operation instance."""

    op_type: int
    args: bytes


def _matches(matcher, args):
    if matcher is None:
        return True
    if isinstance(matcher, (bytes, bytearray)):
        return bytes(matcher) == args
    return bool(matcher(args))


class _Pair(NamedTuple):
    matcher_a: object
    matcher_b: object
    relation: Optional[Callable[[bytes, bytes], bool]]


class SemanticsRegistry:
    """Commutative pairs and inverse mappings between registered operation types.

    A matcher is ``None`` (always applies), a ``bytes`` literal that must equal
    the argument bytes, or a predicate over the argument bytes.  ``relation``
    is an optional predicate over both argument lists, for conditions such as
    "distinct keys" that no single-sided matcher can express.
    """

    def __init__(self, known_types: Callable[[int], bool] = lambda t: True):
        self._known = known_types
        self._pairs = {}
        self._inverses = {}

    def _require(self, *op_types):
        for t in op_types:
            if not self._known(t):
                raise RegistrationError(f"unknown operation type {t!r}")

    def add_commutativity(self, op_type_1, matcher_1, op_type_2, matcher_2, relation=None):
        self._require(op_type_1, op_type_2)
        self._pairs.setdefault((op_type_1, op_type_2), []).append(
            _Pair(matcher_1, matcher_2, relation))
        if op_type_1 != op_type_2 or matcher_1 is not matcher_2 or relation is not None:
            swapped = None if relation is None else (lambda b, a, _r=relation: _r(a, b))
            self._pairs.setdefault((op_type_2, op_type_1), []).append(
                _Pair(matcher_2, matcher_1, swapped))

    def is_commutative(self, type_a, args_a, type_b, args_b):
        for pair in self._pairs.get((type_a, type_b), ()):
            if not _matches(pair.matcher_a, args_a) or not _matches(pair.matcher_b, args_b):
                continue
            if pair.relation is None or pair.relation(args_a, args_b):
                return True
        return False

    def commutes(self, a: OpSem, b: OpSem):
        return self.is_commutative(a.op_type, a.args, b.op_type, b.args)

    def add_inverse(self, op_type, arg_transform, inverse_op_type):
        self._require(op_type, inverse_op_type)
        self._inverses[op_type] = (inverse_op_type, arg_transform)

    def inverse_of(self, op_type, args):
        """Return ``(inverse_op_type, inverse_args)`` or ``None``."""
        entry = self._inverses.get(op_type)
        if entry is None:
            return None
        inv_type, transform = entry
        return inv_type, (args if transform is None else bytes(transform(args)))

    def has_inverse(self, op_type):
        return op_type in self._inverses
