"""Shared exception types."""


class OutOfHistoryError(RuntimeError):
    """A field or source was queried at a time the stored history does not cover."""


class DomainTooSmallError(RuntimeError):
    """Grid does not contain the support of the particles/field it must represent."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
