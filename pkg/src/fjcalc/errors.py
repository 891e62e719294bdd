"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation (negative time, ...)."""


class UnboundedDelayError(ArithmeticError):
    """No finite horizontal deviation exists between an envelope and a service curve."""

    def __init__(self, message="unbounded delay", queue=None):
        self.queue = queue
        if queue is not None:
            message = "unbounded delay: queue %d" % queue
        super().__init__(message)


class UnreachableLevelError(ValueError):
    """The requested level exceeds the supremum of a cumulative function."""


class CausalityError(ValueError):
    """Departures exceed arrivals at some time."""


class SplitError(ValueError):
    """Inconsistent or invalid fork split."""
