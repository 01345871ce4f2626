"""Exception hierarchy shared across the package."""

from __future__ import annotations

__all__ = [
    "RateSyncError",
    "ConfigurationError",
    "GraphValidationError",
    "TransportContractError",
    "TypedAccessError",
    "ParameterNotFound",
    "EpisodeFault",
]


class RateSyncError(Exception):
    """Base class for everything this package raises on purpose."""


class ConfigurationError(RateSyncError):
    """A spec, config file, or call was malformed before anything ran."""


class GraphValidationError(RateSyncError):
    """A graph failed validation; carries the diagnostics that failed it."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(f"graph validation failed: {lines}")


class TransportContractError(RateSyncError):
    """Message order or losslessness was violated on a channel."""


class TypedAccessError(RateSyncError):
    """A parameter was read with a type it does not hold."""


class ParameterNotFound(RateSyncError, KeyError):
    """Read of a parameter key that was never set."""


class EpisodeFault(RateSyncError):
    """A node callback failed or state became unusable mid-episode."""

    def __init__(self, node: str, message: str, cause: BaseException | None = None):
        self.node = node
        self.cause = cause
        super().__init__(f"node '{node}': {message}")
