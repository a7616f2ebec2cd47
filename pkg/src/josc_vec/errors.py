"""Exception types shared across the package."""


class JoscError(Exception):
    """Base class for all package errors."""


class ScenarioError(JoscError, ValueError):
    """Invalid scenario or generator parameters."""


class ConfigError(ScenarioError):
    """Problem with a config file; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class MissingKeyError(ConfigError):
    pass


class MalformedValueError(ConfigError):
    pass


class InvariantViolationError(ConfigError):
    pass


class LinkUnusableError(JoscError, ValueError):
    """A radio link has zero rate, so the task can only run locally."""


class DomainError(JoscError, ValueError):
    """A quantity fell outside the domain of a closed-form expression."""


class UtilityDomainError(DomainError):
    """``1 + beta - T`` is not positive; the selection is infeasible."""


class ContractError(JoscError, ValueError):
    """A caller broke an input contract (e.g. a selection row that is not one-hot)."""


class InfeasibleSelectionError(JoscError):
    """No resource allocation satisfies the latency constraints of a selection.

    ``vehicle`` is the 0-based index of the vehicle to demote first.
    """

    def __init__(self, vehicle, server, message):
        super().__init__(message)
        self.vehicle = vehicle
        self.server = server


class ConvergenceError(JoscError):
    """An iterative solver hit its iteration cap; ``best`` holds the best feasible iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class OracleLimitError(JoscError):
    """The brute-force oracle refuses instances above its size limits."""
