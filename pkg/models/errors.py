from typing import List, Optional


class RelayStabilityError(Exception):
    """Base class for every error raised by the stability services"""


class ConfigError(RelayStabilityError):
    """Scenario document failed validation"""

    def __init__(self, message: str, locations: Optional[List[str]] = None):
        super().__init__(message)
        self.locations = locations or []


class NonDecreasingThresholds(RelayStabilityError):
    """SNR thresholds are not strictly decreasing"""


class NoInteriorRoot(RelayStabilityError):
    """Relay queue chain has no normalizable solution (unstable)"""

    def __init__(self, message: str, drift: float = 0.0):
        super().__init__(message)
        self.drift = drift


class SingularSystem(RelayStabilityError):
    """Boundary system is numerically singular or roots are near-multiple"""


class Unstable(RelayStabilityError):
    """Approximate relay queue is unstable for the requested fraction vector"""


class UnknownIndex(RelayStabilityError):
    """Communication index does not appear in the policy"""


class DepthTooLarge(RelayStabilityError):
    """Prefix depth exceeds the number of communications"""


class AlphaInfeasible(RelayStabilityError):
    """Fraction vector exceeds the per-flow stability threshold"""


class ComplexityGuard(RelayStabilityError):
    """Requested enumeration exceeds the evaluation budget"""

    def __init__(self, message: str, requested: float, budget: float):
        super().__init__(message)
        self.requested = requested
        self.budget = budget


class EpsilonTooLarge(RelayStabilityError):
    """Precision is at least the best single-flow rate"""


class DimensionMismatch(RelayStabilityError):
    """Point and generator dimensions differ"""


class Inconclusive(RelayStabilityError):
    """Backlog trend falls inside the undecided band"""

    def __init__(self, message: str, slope: float, suggested_horizon: int):
        super().__init__(message)
        self.slope = slope
        self.suggested_horizon = suggested_horizon
