"""
Domain errors.

Every error carries the exit code the CLI reports for it.
"""


class InNetworkError(Exception):
    """Base class for all domain errors"""
    exit_code = 1


# ==================== NUMERICS ====================

class NonConvergence(InNetworkError):
    exit_code = 6


class NotPositiveDefinite(InNetworkError):
    exit_code = 6


class ShapeMismatch(InNetworkError):
    pass


# ==================== NETWORK ====================

class InvalidGraph(InNetworkError):
    pass


class ConnectivityFailure(InNetworkError):
    exit_code = 4


# ==================== SIMULATION ====================

class MissingMessage(InNetworkError):
    pass


class NonFinite(InNetworkError):
    """Some agent state entry became NaN/Inf (divergent hyperparameters)."""
    exit_code = 5


# ==================== METRICS ====================

class DegenerateTruth(InNetworkError):
    pass


class NoAnomalies(InNetworkError):
    pass


# ==================== CONFIGURATION / IO ====================

class ConfigParseError(InNetworkError):
    exit_code = 3

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class ConfigValidationError(InNetworkError):
    exit_code = 3

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EstimateFileError(InNetworkError):
    exit_code = 7
