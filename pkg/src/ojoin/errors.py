"""Shared error types.

Exit-code mapping used by the CLI: parse/config errors -> 2,
budget violations -> 3, obliviousness UNEQUAL verdict -> 4.
"""


class OjoinError(Exception):
    """Base class for engine errors."""


class InvalidArgumentError(OjoinError):
    """A caller violated an operation's documented precondition."""


class PreconditionError(OjoinError):
    """Data-content precondition violated (e.g. duplicate keys where
    distinct keys are required)."""


class BudgetOverflowError(OjoinError):
    """A computed budget or slot count exceeds the representable/configured cap."""


class BudgetExceededError(OjoinError):
    """A public size bound tau was violated by the true data size.

    Inside the engine this is the AGM-violation alarm: the size-bound
    analysis guarantees it never fires, so seeing it means an engine bug
    or a user-supplied tau that is too small.
    """


class GhdInvalidError(OjoinError):
    """A decomposition violates edge coverage or attribute connectivity."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class SizeLimitError(OjoinError):
    """Input exceeds a size cap of an exhaustive procedure."""


class QueryFormatError(OjoinError):
    """A query or relation file failed to parse."""
