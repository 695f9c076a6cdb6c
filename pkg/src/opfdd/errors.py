"""Exception hierarchy shared across the package."""


class OpfError(Exception):
    """Base class for all package errors."""


class NetworkError(OpfError):
    pass


class MalformedCase(NetworkError):
    pass


class UnsupportedCostModel(NetworkError):
    pass


class DanglingReference(NetworkError):
    pass


class DisconnectedNetwork(NetworkError):
    pass


class SchemaViolation(NetworkError):
    """Raised by the JSON reader; ``path`` locates the offending value."""

    def __init__(self, message, path="$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ZeroTap(NetworkError):
    pass


class SolverDiverged(OpfError):
    pass


class InfeasibleStart(OpfError):
    pass


class NonconvexQuadratic(OpfError):
    pass


class NonCoerciveBus(OpfError):
    pass


class UnknownSetting(OpfError, KeyError):
    pass


class UnknownScenario(OpfError, KeyError):
    pass
