"""Semantic exception hierarchy shared across the package."""


class HpotolError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HpotolError, ValueError):
    """Inputs violate a documented parameter domain or invariant."""


class SizeError(HpotolError, ValueError):
    """Requested sample sizes are inconsistent with the available data."""


class DomainError(HpotolError, ValueError):
    """An operation was called on data outside its domain (e.g. empty set)."""


class NumericError(HpotolError, FloatingPointError):
    """A non-finite value was encountered during optimization."""


class StateError(HpotolError, RuntimeError):
    """A stateful protocol was driven past a terminal state."""


class CsvFormatError(HpotolError, ValueError):
    """A results CSV does not match its declared schema."""
