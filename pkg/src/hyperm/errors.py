"""Exception types shared across the package."""


class HypermError(Exception):
    """Base class for all package errors."""


class GeometryError(HypermError):
    """Malformed polyhedron, partition, or scenario geometry."""


class OutsideEnvironmentError(HypermError):
    """A queried point lies outside the mission space."""

    def __init__(self, point):
        self.point = point
        super().__init__(f"point ({point[0]:.6g}, {point[1]:.6g}) outside environment")


class UnreachableError(HypermError):
    """No feasible transit exists between the requested endpoints."""


class ScenarioError(HypermError):
    """A scenario file failed validation."""


class StepSizeError(HypermError):
    """A covariance integration step destroyed positive definiteness."""


class IntegrationError(HypermError):
    """Trajectory integration failed (stalled event bisection, out of bounds)."""


class SolverError(HypermError):
    """An inner optimization failed to produce a usable iterate."""

    def __init__(self, message, segment=None):
        self.segment = segment
        super().__init__(message)


class InfeasibleError(SolverError):
    """Boundary conditions violate the minimum-transit-time bound."""
