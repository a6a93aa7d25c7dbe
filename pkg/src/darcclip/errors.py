"""Shared exception types, kept in one place so the CLI can map them to exit codes."""


class ConfigurationError(ValueError):
    """A configuration value or combination of values is invalid."""


class DataFormatError(ValueError):
    """A file does not conform to its documented binary layout."""


class UndefinedMetricError(ValueError):
    """A metric is mathematically undefined for the given inputs."""
