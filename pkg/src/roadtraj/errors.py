"""Exception types shared across the package."""


class RoadTrajError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RoadTrajError):
    """Malformed input files, broken graph invariants, or bad identifiers."""


class ConfigError(RoadTrajError):
    """Invalid or inconsistent configuration values."""


class NumericError(RoadTrajError):
    """A numeric invariant was violated (non-finite values, divergence)."""


class GraphError(RoadTrajError):
    """Misuse of the autodiff graph, e.g. backward run twice on one graph."""


class InvalidDirectionError(DataError):
    """No edge matches a (node, direction) pair during decoding.

    `step` is the 1-based position where decoding failed and `partial`
    holds the edge ids decoded so far, so callers can keep the prefix.
    """

    def __init__(self, message, step, partial):
        super().__init__(message)
        self.step = step
        self.partial = list(partial)
