"""Typed errors raised by the pipeline stages."""
from __future__ import annotations


class RugwatchError(Exception):
    """Base class for all errors raised by this package."""


class SchemaViolation(RugwatchError):
    """An input record does not match the expected schema."""


class OrderingViolation(RugwatchError):
    """Duplicate (block, log_index, emitter) triple in an event stream."""


class UnknownSignature(RugwatchError):
    """topic0 of a raw log matches none of the decoded event kinds."""


class MalformedData(RugwatchError):
    """A raw log has the right signature but inconsistent topics/data."""


class RpcUnavailable(RugwatchError):
    """The JSON-RPC endpoint kept failing after bounded retries."""


class OrientationUnknown(RugwatchError):
    """A pool event arrived before the pool's PairCreated."""


class InsufficientLiquidity(RugwatchError):
    """A swap asked for at least as much output as the pool holds."""


class EmptyHistory(RugwatchError):
    """A pool series was requested but no Sync has been seen."""


class EmptyDistribution(RugwatchError):
    """All balances are zero after exclusions; HHI is undefined."""


class LedgerUnderflow(RugwatchError):
    """A Transfer tried to move more than the sender's tracked balance."""


class MissingMetadata(RugwatchError):
    """A token is missing required sidecar metadata (e.g. decimals)."""


class SpanTooShort(RugwatchError):
    """A token's usable block span cannot fit the requested sample."""


class NoData(RugwatchError):
    """A feature snapshot was requested before the pool's first Sync."""


class DegenerateData(RugwatchError):
    """A training set does not contain both classes."""


class TooFewTokens(RugwatchError):
    """Fewer token groups than requested folds."""


class WidthMismatch(RugwatchError):
    """A prediction input has the wrong number of feature columns."""


class InvalidParams(RugwatchError):
    """Scenario or hyperparameter values outside their legal range."""
