"""Exception hierarchy shared across the pipeline."""


class FarelensError(Exception):
    """Base class for all pipeline errors."""


class FatalInputError(FarelensError):
    """Input cannot be processed at all (unreadable stream, bad header)."""


class InvalidWindowError(FarelensError):
    """Analysis date window is empty or inverted."""


class InsufficientDataError(FarelensError):
    """Too few stations/rows for the requested computation."""


class ConfigError(FarelensError):
    """A configuration value is out of its allowed range."""
